#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/nn/layers.hpp"
#include "strokegen/sample.hpp"

namespace strokegen {

namespace utf8 {

/// Decodes UTF-8; malformed input raises InvalidArgument.
inline std::u32string decode(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw InvalidArgument("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + static_cast<std::size_t>(len) > s.size())
      throw InvalidArgument("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) throw InvalidArgument("invalid UTF-8 continuation at offset " + std::to_string(i));
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) {
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (c >> 18));
      out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

}  // namespace utf8

/// Ordered character set. Index i is the i-th character.
class Vocab {
 public:
  Vocab() : Vocab(printable_ascii()) {}

  explicit Vocab(std::u32string chars) : chars_(std::move(chars)) {
    if (chars_.empty()) throw InvalidArgument("vocabulary is empty");
    for (std::size_t i = 0; i < chars_.size(); ++i)
      if (!index_.emplace(chars_[i], static_cast<int>(i)).second)
        throw InvalidArgument("duplicate character in vocabulary at index " + std::to_string(i));
  }

  static Vocab printable_ascii() {
    std::u32string s;
    for (char32_t c = 0x20; c <= 0x7E; ++c) s.push_back(c);
    return Vocab(s);
  }

  std::size_t size() const { return chars_.size(); }
  char32_t at(std::size_t i) const { return chars_.at(i); }
  const std::u32string& chars() const { return chars_; }
  bool contains(char32_t c) const { return index_.count(c) != 0; }

  int index_of(char32_t c, std::size_t position = 0) const {
    auto it = index_.find(c);
    if (it == index_.end()) throw VocabError(c, position);
    return it->second;
  }

  /// One character per line; backslash, space, newline and tab are
  /// written as \\, \s, \n and \t.
  std::string manifest() const {
    std::string out;
    for (char32_t c : chars_) {
      switch (c) {
        case U'\\': out += "\\\\"; break;
        case U' ': out += "\\s"; break;
        case U'\n': out += "\\n"; break;
        case U'\t': out += "\\t"; break;
        default: out += utf8::encode(std::u32string(1, c));
      }
      out += '\n';
    }
    return out;
  }

  static Vocab from_manifest(std::string_view text) {
    std::u32string chars;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t end = text.find('\n', pos);
      std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
      pos = end == std::string_view::npos ? text.size() : end + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      if (line == "\\\\") chars.push_back(U'\\');
      else if (line == "\\s") chars.push_back(U' ');
      else if (line == "\\n") chars.push_back(U'\n');
      else if (line == "\\t") chars.push_back(U'\t');
      else {
        const auto cps = utf8::decode(line);
        if (cps.size() != 1 || cps[0] == U'\\')
          throw ParseError(line_no, "vocabulary lines must hold exactly one (escaped) character");
        chars.push_back(cps[0]);
      }
    }
    return Vocab(chars);
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("cannot open " + path + " for writing");
    os << manifest();
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_manifest(ss.str());
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.chars_ == b.chars_; }

 private:
  std::u32string chars_;
  std::unordered_map<char32_t, int> index_;
};

inline std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  const auto cps = utf8::decode(text);
  std::vector<int> out;
  out.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) out.push_back(vocab.index_of(cps[i], i));
  return out;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::u32string s;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
      throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary");
    s.push_back(vocab.at(static_cast<std::size_t>(id)));
  }
  return utf8::encode(s);
}

inline constexpr int kLayoutFields = 8;

/// Fourier features per word: word index / count (as for characters), the
/// horizontal extent in units of 20 line heights and the vertical centre.
inline nn::Matrix layout_position_features(const WordLayout& layout, Eigen::Index pos_features) {
  validate_layout(layout);
  std::vector<double> word, x0, x1, yc;
  const double n = static_cast<double>(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Box& b = layout.boxes[i].bbox;
    word.push_back(static_cast<double>(i) / n);
    x0.push_back(b.x0 * 0.05);
    x1.push_back(b.x1 * 0.05);
    yc.push_back(0.5 * (b.y0 + b.y1));
  }
  nn::Matrix f(static_cast<Eigen::Index>(layout.size()), 4 * pos_features);
  f << nn::fourier_features(word, pos_features, 4.0), nn::fourier_features(x0, pos_features, 64.0),
      nn::fourier_features(x1, pos_features, 64.0), nn::fourier_features(yc, pos_features, 4.0);
  return f;
}

/// Per word: x0, y0, x1, y1, width, height, index / count, and the gap from
/// the previous box (0 for the first word).
inline nn::Matrix layout_fields(const WordLayout& layout) {
  validate_layout(layout);
  const auto n = static_cast<Eigen::Index>(layout.size());
  nn::Matrix f(n, kLayoutFields);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Box& b = layout.boxes[static_cast<std::size_t>(i)].bbox;
    const double gap = i ? b.x0 - layout.boxes[static_cast<std::size_t>(i - 1)].bbox.x1 : 0.0;
    f.row(i) << b.x0, b.y0, b.x1, b.y1, b.width(), b.height(), static_cast<double>(i) / static_cast<double>(n), gap;
  }
  return f;
}

/// Word index / word count of every non-space character, in order.
inline std::vector<double> glyph_words(std::string_view text);

struct CharPosition {
  double progress = 0.0;  // over (0, 1)
  double word = 0.0;      // word index / word count
  double glyph = 0.0;     // glyph index + 0.5; spaces sit between glyphs
};

/// Non-space characters are glyphs, evenly spaced over the line; a space
/// takes the boundary between its neighbours.
inline std::vector<CharPosition> char_positions(std::string_view text) {
  const auto cps = utf8::decode(text);
  std::size_t glyphs = 0, words = 0;
  bool in_word = false;
  for (char32_t c : cps) {
    if (c != U' ') {
      ++glyphs;
      if (!in_word) ++words;
    }
    in_word = c != U' ';
  }
  std::vector<CharPosition> out;
  const double G = static_cast<double>(std::max<std::size_t>(glyphs, 1));
  const double W = static_cast<double>(std::max<std::size_t>(words, 1));
  std::size_t g = 0, w = 0;
  in_word = false;
  for (char32_t c : cps) {
    if (c == U' ') {
      out.push_back({static_cast<double>(g) / G, static_cast<double>(w) / W, static_cast<double>(g)});
      in_word = false;
      continue;
    }
    if (!in_word && g > 0) ++w;
    in_word = true;
    out.push_back({(static_cast<double>(g) + 0.5) / G, static_cast<double>(w) / W, static_cast<double>(g) + 0.5});
    ++g;
  }
  return out;
}

inline std::vector<double> glyph_words(std::string_view text) {
  std::vector<double> out;
  const auto cps = utf8::decode(text);
  const auto pos = char_positions(text);
  for (std::size_t i = 0; i < cps.size(); ++i)
    if (cps[i] != U' ') out.push_back(pos[i].word);
  return out;
}

struct TextLayoutConfig {
  int dim = 64;         // width of char embeddings and of the fused output
  int style_dim = 96;   // width of incoming style features
  int heads = 1;
  int pos_features = 16;  // Fourier features per positional scalar

  void validate() const {
    if (dim <= 0 || style_dim <= 0 || heads <= 0 || dim % heads)
      throw InvalidArgument("text-layout dim must be a positive multiple of heads");
    if (pos_features <= 0 || pos_features % 2) throw InvalidArgument("pos_features must be positive and even");
  }
};

/// Attention maps from one fuse call, one matrix per head.
struct FuseTrace {
  nn::Var gamma, beta, theta, delta;
  std::vector<nn::Matrix> beta_probs, theta_probs, delta_probs;
};

/// Character, style and layout conditioning: Γs = Attn(E, S); β = Attn(strokes,
/// Γs); Θ = Attn(β, Γs); δ = Attn(Θ, ωL); output Θ + δ.
class TextLayoutEncoder {
 public:
  TextLayoutEncoder(nn::ParamStore& store, TextLayoutConfig cfg, Vocab vocab, Rng& rng)
      : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    const Eigen::Index D = cfg_.dim;
    char_table_ = &store.add("text.chars", nn::normal_init(static_cast<Eigen::Index>(vocab_.size()), D, 0.5, rng));
    char_pos_ = nn::Linear(store, "text.char_pos", 3 * cfg_.pos_features, D, rng, false);
    layout_in_ = nn::Linear(store, "layout.in", kLayoutFields, D, rng);
    layout_pos_ = nn::Linear(store, "layout.pos", 4 * cfg_.pos_features, D, rng, false);
    layout_out_ = nn::Linear(store, "layout.out", D, D, rng);
    text_style_ = nn::MultiHeadAttention(store, "text.style_attn", D, cfg_.style_dim, cfg_.heads, rng);
    beta_ = nn::MultiHeadAttention(store, "fuse.beta", D, D, cfg_.heads, rng);
    theta_ = nn::MultiHeadAttention(store, "fuse.theta", D, D, cfg_.heads, rng);
    delta_ = nn::MultiHeadAttention(store, "fuse.delta", D, D, cfg_.heads, rng, false);
  }

  const TextLayoutConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const nn::MultiHeadAttention& layout_attention() const { return delta_; }
  const nn::MultiHeadAttention& style_attention() const { return text_style_; }
  const nn::Linear& layout_input() const { return layout_in_; }
  const nn::Linear& layout_position() const { return layout_pos_; }

  /// E: table lookup plus a projection of Fourier position features.
  nn::Var char_embeddings(nn::Tape& t, std::string_view text) const {
    const auto ids = tokenize(text, vocab_);
    if (ids.empty()) throw InvalidArgument("text is empty");
    std::vector<double> progress, word, glyph;
    for (const auto& p : char_positions(text)) {
      progress.push_back(p.progress);
      word.push_back(p.word);
      glyph.push_back(p.glyph);
    }
    nn::Matrix feats(static_cast<Eigen::Index>(ids.size()), 3 * cfg_.pos_features);
    feats << nn::fourier_features(progress, cfg_.pos_features, 32.0), nn::fourier_features(word, cfg_.pos_features, 4.0),
        nn::glyph_index_features(glyph, cfg_.pos_features);
    return nn::gather_rows(t.param(*char_table_), ids) + char_pos_(t, t.constant(feats));
  }

  /// ωL: one token per word, h + MLP(h) where h projects the box fields and
  /// their Fourier features.
  nn::Var encode_layout(nn::Tape& t, const WordLayout& layout) const {
    if (layout.empty()) throw LayoutError("layout has no words");
    nn::Var h = layout_in_(t, t.constant(layout_fields(layout))) +
                layout_pos_(t, t.constant(layout_position_features(layout, cfg_.pos_features)));
    return h + layout_out_(t, nn::gelu(h));
  }

  /// Γs: characters attend to style patches.
  nn::Var text_style_attention(nn::Tape& t, nn::Var E, nn::Var S, std::vector<nn::Matrix>* probs = nullptr) const {
    if (E.cols() != cfg_.dim || S.cols() != cfg_.style_dim)
      throw InvalidArgument("text_style_attention: embedding widths do not match the config");
    nn::Var g = text_style_(t, E, S, probs);
    if (!g.value().allFinite()) throw NumericalError("non-finite text-style attention");
    return g;
  }

  nn::Var fuse(nn::Tape& t, nn::Var gamma, nn::Var strokes, nn::Var layout, FuseTrace* trace = nullptr) const {
    if (layout.rows() == 0) throw LayoutError("layout has no words");
    if (gamma.cols() != cfg_.dim || strokes.cols() != cfg_.dim || layout.cols() != cfg_.dim)
      throw InvalidArgument("fuse: input widths do not match the config");
    FuseTrace local;
    FuseTrace& tr = trace ? *trace : local;
    tr.gamma = gamma;
    tr.beta = beta_(t, strokes, gamma, trace ? &tr.beta_probs : nullptr);
    tr.theta = theta_(t, tr.beta, gamma, trace ? &tr.theta_probs : nullptr);
    tr.delta = delta_(t, tr.theta, layout, trace ? &tr.delta_probs : nullptr);
    nn::Var out = tr.theta + tr.delta;
    if (!out.value().allFinite()) throw NumericalError("non-finite text-layout feature");
    return out;
  }

  /// Context for fuse: E plus the text-style attention, so character
  /// identity survives alongside the style mixture.
  nn::Var style_context(nn::Tape& t, std::string_view text, nn::Var S) const {
    nn::Var E = char_embeddings(t, text);
    return E + text_style_attention(t, E, S);
  }

  /// Zeroes and freezes the value projection of the layout attention, which
  /// makes δ identically zero.
  void ablate_layout() {
    delta_.v.weight->value.setZero();
    delta_.v.weight->trainable = false;
  }

  bool layout_ablated() const { return !delta_.v.weight->trainable && delta_.v.weight->value.isZero(); }

 private:
  TextLayoutConfig cfg_;
  Vocab vocab_;
  nn::Parameter* char_table_ = nullptr;
  nn::Linear char_pos_;
  nn::Linear layout_in_, layout_pos_, layout_out_;
  nn::MultiHeadAttention text_style_, beta_, theta_, delta_;
};

}  // namespace strokegen
