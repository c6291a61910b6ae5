#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "strokegen/errors.hpp"
#include "strokegen/stroke.hpp"

namespace strokegen {

struct WordBox {
  std::string word;
  Box bbox;

  friend bool operator==(const WordBox&, const WordBox&) = default;
};

/// Per-word boxes in normalized line units (x right, y down), ordered left
/// to right.
struct WordLayout {
  std::vector<WordBox> boxes;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }

  friend bool operator==(const WordLayout&, const WordLayout&) = default;
};

struct Sample {
  std::string text;
  int writer_id = 0;
  StrokeSequence strokes;
  WordLayout layout;

  friend bool operator==(const Sample&, const Sample&) = default;
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Printable ASCII only; words are separated by exactly one space.
inline void validate_text(std::string_view text) {
  if (text.empty()) throw ValidationError("text is empty");
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x20 || c > 0x7E)
      throw ValidationError("text contains a non-printable or non-ASCII byte at offset " + std::to_string(i));
  }
  if (text.front() == ' ' || text.back() == ' ' || text.find("  ") != std::string_view::npos)
    throw ValidationError("words in text must be separated by single spaces");
}

inline void validate_layout(const WordLayout& layout) {
  if (layout.empty()) throw ValidationError("layout has no boxes");
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const auto& b = layout.boxes[i];
    const auto& r = b.bbox;
    if (!std::isfinite(r.x0) || !std::isfinite(r.y0) || !std::isfinite(r.x1) || !std::isfinite(r.y1))
      throw ValidationError("box " + std::to_string(i) + " has a non-finite coordinate");
    if (!(r.x0 < r.x1)) throw ValidationError("box " + std::to_string(i) + " has x0 >= x1");
    if (!(r.y0 < r.y1)) throw ValidationError("box " + std::to_string(i) + " has y0 >= y1");
    if (b.word.empty() || b.word.find(' ') != std::string::npos)
      throw ValidationError("box " + std::to_string(i) + " word must be non-empty without spaces");
    if (i > 0 && layout.boxes[i - 1].bbox.x0 > r.x0)
      throw ValidationError("boxes are not ordered left-to-right at box " + std::to_string(i));
  }
}

inline std::string layout_text(const WordLayout& layout) {
  std::string s;
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    if (i) s += ' ';
    s += layout.boxes[i].word;
  }
  return s;
}

inline void validate_sample(const Sample& s) {
  validate_text(s.text);
  if (s.writer_id < 0) throw ValidationError("writer_id must be non-negative");
  try {
    s.strokes.validate();
  } catch (const InvalidStroke& e) {
    throw ValidationError(e.what());
  }
  validate_layout(s.layout);
  if (layout_text(s.layout) != s.text) throw ValidationError("layout words do not match text");
}

// ---- JSON-lines stroke file ----------------------------------------------

using ordered_json = nlohmann::ordered_json;

inline ordered_json layout_to_json(const WordLayout& layout) {
  ordered_json arr = ordered_json::array();
  for (const auto& b : layout.boxes) {
    ordered_json o;
    o["word"] = b.word;
    o["bbox"] = {b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1};
    arr.push_back(std::move(o));
  }
  return arr;
}

inline WordLayout layout_from_json(const ordered_json& arr) {
  if (!arr.is_array()) throw ValidationError("\"layout\" must be an array");
  WordLayout layout;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& o = arr[i];
    const std::string where = "layout[" + std::to_string(i) + "]";
    if (!o.is_object()) throw ValidationError(where + " must be an object");
    if (!o.contains("word") || !o["word"].is_string()) throw ValidationError(where + ".word must be a string");
    if (!o.contains("bbox") || !o["bbox"].is_array() || o["bbox"].size() != 4)
      throw ValidationError(where + ".bbox must be an array of 4 numbers");
    for (const auto& v : o["bbox"])
      if (!v.is_number()) throw ValidationError(where + ".bbox must be an array of 4 numbers");
    const auto& bb = o["bbox"];
    layout.boxes.push_back(
        {o["word"].get<std::string>(),
         {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()}});
  }
  return layout;
}

inline ordered_json strokes_to_json(const StrokeSequence& seq) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : seq) arr.push_back({p.dx, p.dy, static_cast<int>(p.pen)});
  return arr;
}

inline StrokeSequence strokes_from_json(const ordered_json& arr) {
  if (!arr.is_array()) throw ValidationError("\"strokes\" must be an array");
  std::vector<StrokePoint> pts;
  pts.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& t = arr[i];
    const std::string where = "strokes[" + std::to_string(i) + "]";
    if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() || !t[2].is_number_integer())
      throw ValidationError(where + " must be [dx, dy, pen]");
    const auto pen = t[2].get<long long>();
    if (pen != 0 && pen != 1) throw ValidationError(where + " pen must be 0 or 1");
    pts.push_back({t[0].get<double>(), t[1].get<double>(), static_cast<std::uint8_t>(pen)});
  }
  try {
    return StrokeSequence(std::move(pts));
  } catch (const InvalidStroke& e) {
    throw ValidationError(e.what());
  }
}

inline std::string sample_to_json_line(const Sample& s) {
  ordered_json o;
  o["text"] = s.text;
  o["writer_id"] = s.writer_id;
  o["strokes"] = strokes_to_json(s.strokes);
  o["layout"] = layout_to_json(s.layout);
  return o.dump();
}

/// Parses one line; `line_no` is used for error messages only.
inline Sample sample_from_json_line(std::string_view line, std::size_t line_no = 0) {
  ordered_json o;
  try {
    o = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_no, e.what());
  }
  try {
    if (!o.is_object()) throw ValidationError("record must be a JSON object");
    for (auto it = o.begin(); it != o.end(); ++it) {
      const auto& k = it.key();
      if (k != "text" && k != "writer_id" && k != "strokes" && k != "layout")
        throw ValidationError("unknown field \"" + k + "\"");
    }
    if (!o.contains("text") || !o["text"].is_string()) throw ValidationError("\"text\" must be a string");
    if (!o.contains("writer_id") || !o["writer_id"].is_number_integer())
      throw ValidationError("\"writer_id\" must be an integer");
    if (!o.contains("strokes")) throw ValidationError("missing \"strokes\"");
    if (!o.contains("layout")) throw ValidationError("missing \"layout\"");
    Sample s;
    s.text = o["text"].get<std::string>();
    s.writer_id = o["writer_id"].get<int>();
    s.strokes = strokes_from_json(o["strokes"]);
    s.layout = layout_from_json(o["layout"]);
    validate_sample(s);
    return s;
  } catch (const ValidationError& e) {
    throw ValidationError(line_no, e.reason());
  }
}

inline std::vector<Sample> read_samples(std::istream& is) {
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(sample_from_json_line(line, line_no));
  }
  return out;
}

inline std::vector<Sample> load_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open " + path);
  return read_samples(is);
}

inline void write_samples(std::ostream& os, const std::vector<Sample>& samples) {
  for (const auto& s : samples) os << sample_to_json_line(s) << '\n';
}

inline void save_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot open " + path + " for writing");
  write_samples(os, samples);
  if (!os) throw InvalidArgument("failed writing " + path);
}

}  // namespace strokegen
