#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/random.hpp"
#include "strokegen/sample.hpp"
#include "strokegen/stroke.hpp"

namespace strokegen {

struct SyntheticWriterStyle {
  double slant = 0.0;        // radians, positive leans right
  double glyph_scale = 1.0;  // horizontal glyph scale
  double spacing = 0.3;      // gap between letters, line-height units
  std::uint64_t jitter_seed = 0;

  friend bool operator==(const SyntheticWriterStyle&, const SyntheticWriterStyle&) = default;
};

struct SyntheticOptions {
  int min_words = 2;
  int max_words = 3;
  double base_letter_width = 0.6;
  double base_word_gap = 1.05;  // added to the writer's letter spacing
  double max_extra_word_gap = 2.4;
  double point_jitter = 0.008;
};

namespace glyphs {

// Every glyph is resampled to exactly this many points.
inline constexpr int kPointsPerGlyph = 8;

using Polyline = std::vector<Point2>;
using Glyph = std::vector<Polyline>;

// Capitals in a unit box, y down, top at 0 and baseline at 1.
inline const Glyph& capital(char c) {
  static const std::array<Glyph, 26> table = {{
      /*A*/ {{{0, 1}, {0.5, 0}, {1, 1}}, {{0.25, 0.55}, {0.75, 0.55}}},
      /*B*/ {{{0, 1}, {0, 0}, {0.7, 0.05}, {0.7, 0.45}, {0, 0.5}, {0.8, 0.6}, {0.8, 0.95}, {0, 1}}},
      /*C*/ {{{1, 0.1}, {0.5, 0}, {0, 0.3}, {0, 0.7}, {0.5, 1}, {1, 0.9}}},
      /*D*/ {{{0, 0}, {0, 1}, {0.6, 1}, {1, 0.7}, {1, 0.3}, {0.6, 0}, {0, 0}}},
      /*E*/ {{{0, 0}, {0, 1}}, {{0, 0}, {1, 0}}, {{0, 0.5}, {0.7, 0.5}}, {{0, 1}, {1, 1}}},
      /*F*/ {{{1, 0}, {0, 0}, {0, 1}}, {{0, 0.5}, {0.7, 0.5}}},
      /*G*/ {{{1, 0.1}, {0.5, 0}, {0, 0.4}, {0.3, 1}, {1, 0.9}, {1, 0.55}, {0.55, 0.55}}},
      /*H*/ {{{0, 0}, {0, 1}}, {{1, 0}, {1, 1}}, {{0, 0.5}, {1, 0.5}}},
      /*I*/ {{{0.2, 0}, {0.8, 0}}, {{0.5, 0}, {0.5, 1}}, {{0.2, 1}, {0.8, 1}}},
      /*J*/ {{{0.3, 0}, {1, 0}}, {{0.7, 0}, {0.7, 0.8}, {0.4, 1}, {0, 0.8}}},
      /*K*/ {{{0, 0}, {0, 1}}, {{1, 0}, {0, 0.55}, {1, 1}}},
      /*L*/ {{{0, 0}, {0, 1}, {1, 1}}},
      /*M*/ {{{0, 1}, {0, 0}, {0.5, 0.6}, {1, 0}, {1, 1}}},
      /*N*/ {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}},
      /*O*/ {{{0.5, 0}, {0, 0.3}, {0, 0.7}, {0.5, 1}, {1, 0.7}, {1, 0.3}, {0.5, 0}}},
      /*P*/ {{{0, 1}, {0, 0}, {0.8, 0.05}, {0.8, 0.5}, {0, 0.55}}},
      /*Q*/ {{{0.5, 0}, {0, 0.35}, {0.5, 1}, {1, 0.35}, {0.5, 0}}, {{0.6, 0.7}, {1, 1}}},
      /*R*/ {{{0, 1}, {0, 0}, {0.8, 0.05}, {0.8, 0.5}, {0, 0.55}, {1, 1}}},
      /*S*/ {{{1, 0.1}, {0.4, 0}, {0, 0.25}, {1, 0.7}, {0.6, 1}, {0, 0.9}}},
      /*T*/ {{{0, 0}, {1, 0}}, {{0.5, 0}, {0.5, 1}}},
      /*U*/ {{{0, 0}, {0, 0.8}, {0.5, 1}, {1, 0.8}, {1, 0}}},
      /*V*/ {{{0, 0}, {0.5, 1}, {1, 0}}},
      /*W*/ {{{0, 0}, {0.25, 1}, {0.5, 0.4}, {0.75, 1}, {1, 0}}},
      /*X*/ {{{0, 0}, {1, 1}}, {{1, 0}, {0, 1}}},
      /*Y*/ {{{0, 0}, {0.5, 0.5}, {1, 0}}, {{0.5, 0.5}, {0.5, 1}}},
      /*Z*/ {{{0, 0}, {1, 0}, {0, 1}, {1, 1}}},
  }};
  const auto u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u < 'A' || u > 'Z') throw InvalidArgument(std::string("no synthetic glyph for character '") + c + "'");
  return table[static_cast<std::size_t>(u - 'A')];
}

inline bool has_glyph(char c) {
  const auto u = std::toupper(static_cast<unsigned char>(c));
  return u >= 'A' && u <= 'Z';
}

inline double polyline_length(const Polyline& p) {
  double len = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) len += std::hypot(p[i].x - p[i - 1].x, p[i].y - p[i - 1].y);
  return len;
}

// Keeps every vertex and inserts points at the midpoints of the longest
// segments until the polyline has `count` points.
inline Polyline densify(Polyline p, std::size_t count) {
  while (p.size() < count) {
    std::size_t best = 1;
    double best_len = -1.0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      const double l = std::hypot(p[i].x - p[i - 1].x, p[i].y - p[i - 1].y);
      if (l > best_len + 1e-12) {
        best_len = l;
        best = i;
      }
    }
    const Point2 mid{0.5 * (p[best - 1].x + p[best].x), 0.5 * (p[best - 1].y + p[best].y)};
    p.insert(p.begin() + static_cast<std::ptrdiff_t>(best), mid);
  }
  return p;
}

/// Glyph strokes with exactly kPointsPerGlyph points in total; extra points
/// go to the strokes with the most length per point.
inline std::vector<Polyline> resampled(char c) {
  const Glyph& g = capital(c);
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : g) {
    counts.push_back(s.size());
    total += s.size();
  }
  while (total < kPointsPerGlyph) {
    std::size_t best = 0;
    double best_ratio = -1.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double r = polyline_length(g[k]) / static_cast<double>(counts[k] - 1);
      if (r > best_ratio + 1e-12) {
        best_ratio = r;
        best = k;
      }
    }
    ++counts[best];
    ++total;
  }
  std::vector<Polyline> out;
  for (std::size_t k = 0; k < g.size(); ++k) out.push_back(densify(g[k], counts[k]));
  return out;
}

}  // namespace glyphs

/// Styles for `num_writers` writers: slants are evenly spread and at least
/// 0.1 rad apart; scale and spacing levels are permuted by the seed.
inline std::vector<SyntheticWriterStyle> make_writer_styles(int num_writers, std::uint64_t seed) {
  if (num_writers < 1) throw InvalidArgument("num_writers must be >= 1");
  Rng rng(seed ^ 0x5717e5eedULL);
  const int n = num_writers;
  std::vector<int> scale_perm(n), spacing_perm(n);
  std::iota(scale_perm.begin(), scale_perm.end(), 0);
  std::iota(spacing_perm.begin(), spacing_perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::swap(scale_perm[i], scale_perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    std::swap(spacing_perm[i], spacing_perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  const double step = n > 1 ? std::max(0.1, 0.6 / (n - 1)) : 0.0;
  std::vector<SyntheticWriterStyle> styles;
  for (int w = 0; w < n; ++w) {
    SyntheticWriterStyle s;
    s.slant = (w - (n - 1) / 2.0) * step;
    s.glyph_scale = n > 1 ? 0.75 + 0.5 * scale_perm[w] / (n - 1) : 1.0;
    s.spacing = n > 1 ? 0.15 + 0.3 * spacing_perm[w] / (n - 1) : 0.3;
    s.jitter_seed = rng.next_u64();
    styles.push_back(s);
  }
  return styles;
}

/// Index range [first, last) of each word's points in a synthetic sample.
struct WordSpan {
  std::size_t first = 0;
  std::size_t last = 0;
};

struct SyntheticLine {
  StrokeSequence strokes;
  std::vector<WordSpan> words;
};

/// Writes `words` in the given style. The result is normalized to unit ink
/// height with its ink box at the origin.
inline SyntheticLine write_line(const std::vector<std::string>& words, const SyntheticWriterStyle& style, Rng& rng,
                                const SyntheticOptions& opt = {}) {
  if (words.empty()) throw InvalidArgument("cannot write an empty line");
  const double shear = std::tan(style.slant);
  const double width = opt.base_letter_width * style.glyph_scale;
  std::vector<AbsolutePoint> pts;
  std::vector<WordSpan> spans;
  double cursor = 0.0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w > 0) cursor += opt.base_word_gap + style.spacing + rng.uniform(0.0, opt.max_extra_word_gap);
    const std::size_t first = pts.size();
    for (std::size_t k = 0; k < words[w].size(); ++k) {
      if (k > 0) cursor += style.spacing;
      for (const auto& stroke : glyphs::resampled(words[w][k])) {
        for (std::size_t i = 0; i < stroke.size(); ++i) {
          const double x = cursor + stroke[i].x * width + (1.0 - stroke[i].y) * shear;
          const double y = stroke[i].y;
          const std::uint8_t pen = i + 1 == stroke.size() ? kPenUp : kPenDown;
          pts.push_back({x + opt.point_jitter * rng.normal(), y + opt.point_jitter * rng.normal(), pen});
        }
      }
      cursor += width;
    }
    spans.push_back({first, pts.size()});
  }
  return {normalize(absolute_to_offsets(pts)), std::move(spans)};
}

inline WordLayout layout_from_spans(const StrokeSequence& strokes, const std::vector<std::string>& words,
                                    const std::vector<WordSpan>& spans) {
  const auto abs = offsets_to_absolute(strokes);
  WordLayout layout;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::span<const AbsolutePoint> part(abs.data() + spans[w].first, spans[w].last - spans[w].first);
    layout.boxes.push_back({words[w], ink_box(part)});
  }
  return layout;
}

inline void validate_vocab_words(const std::vector<std::string>& vocab) {
  if (vocab.empty()) throw InvalidArgument("vocabulary is empty");
  for (const auto& w : vocab) {
    if (w.empty()) throw InvalidArgument("vocabulary contains an empty word");
    for (char c : w)
      if (!glyphs::has_glyph(c)) throw InvalidArgument("vocabulary word \"" + w + "\" has a character without a glyph");
  }
}

/// Deterministic multi-writer dataset. Samples are grouped by writer.
inline std::vector<Sample> generate_synthetic(int num_writers, int samples_per_writer,
                                              const std::vector<std::string>& vocab, std::uint64_t seed,
                                              const SyntheticOptions& opt = {}) {
  if (num_writers < 1) throw InvalidArgument("num_writers must be >= 1");
  if (samples_per_writer < 1) throw InvalidArgument("samples_per_writer must be >= 1");
  if (opt.min_words < 1 || opt.max_words < opt.min_words) throw InvalidArgument("invalid word-count range");
  validate_vocab_words(vocab);
  const auto styles = make_writer_styles(num_writers, seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(num_writers) * samples_per_writer);
  for (int w = 0; w < num_writers; ++w) {
    Rng rng(styles[w].jitter_seed);
    for (int s = 0; s < samples_per_writer; ++s) {
      const auto n_words =
          opt.min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_words - opt.min_words + 1)));
      std::vector<std::string> words;
      std::string text;
      for (int k = 0; k < n_words; ++k) {
        words.push_back(vocab[rng.below(vocab.size())]);
        if (k) text += ' ';
        text += words.back();
      }
      auto line = write_line(words, styles[w], rng, opt);
      Sample sample{text, w, line.strokes, layout_from_spans(line.strokes, words, line.words)};
      validate_sample(sample);
      out.push_back(std::move(sample));
    }
  }
  return out;
}

inline std::vector<std::string> default_vocab() {
  return {"THE", "AND", "FOR", "ARE", "BUT", "NOT", "YOU", "ALL", "ANY", "CAN", "HAD", "HER", "WAS",
          "ONE", "OUR", "OUT", "DAY", "GET", "HAS", "HIM", "HIS", "HOW", "MAN", "NEW", "NOW", "OLD",
          "SEE", "TWO", "WAY", "WHO", "BOY", "DID", "ITS", "LET", "PUT", "SAY", "SHE", "TOO", "USE",
          "AT",  "BE",  "BY",  "DO",  "GO",  "IF",  "IN",  "IS",  "IT",  "ME",  "MY",  "NO",  "OF",
          "ON",  "OR",  "SO",  "TO",  "UP",  "US",  "WE",  "JAZZ", "QUIZ", "KEPT", "VOW", "FIX"};
}

}  // namespace strokegen
