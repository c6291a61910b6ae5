#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/sample.hpp"
#include "strokegen/stroke.hpp"

namespace strokegen {

/// Inclusive index range [first, last] of one pen-down stroke.
struct StrokeGroup {
  std::size_t first = 0;
  std::size_t last = 0;
};

/// Maximal runs of points joined by drawn segments. Isolated pen-up points
/// carry no ink and are not reported.
inline std::vector<StrokeGroup> stroke_groups(std::span<const AbsolutePoint> pts) {
  std::vector<StrokeGroup> groups;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i;
    while (j + 1 < pts.size() && pts[j].pen == kPenDown) ++j;
    if (j > i || pts[i].pen == kPenDown) groups.push_back({i, j});
    i = j + 1;
  }
  return groups;
}

namespace detail {

inline constexpr double kMinBoxExtent = 1e-3;

inline Box pad_degenerate(Box b) {
  if (b.x1 - b.x0 < kMinBoxExtent) {
    const double c = 0.5 * (b.x0 + b.x1);
    b.x0 = c - kMinBoxExtent / 2;
    b.x1 = c + kMinBoxExtent / 2;
  }
  if (b.y1 - b.y0 < kMinBoxExtent) {
    const double c = 0.5 * (b.y0 + b.y1);
    b.y0 = c - kMinBoxExtent / 2;
    b.y1 = c + kMinBoxExtent / 2;
  }
  return b;
}

}  // namespace detail

/// Word boxes from ground-truth ink: stroke groups (in writing order) are
/// split at the k-1 widest horizontal gaps, where a gap is measured from the
/// rightmost ink written so far to the next group's leftmost ink.
inline WordLayout derive_layout(const StrokeSequence& strokes, const std::string& text) {
  const auto words = split_words(text);
  if (words.empty()) throw ValidationError("text has no words");
  const auto pts = offsets_to_absolute(strokes);
  const auto groups = stroke_groups(pts);
  if (groups.size() < words.size())
    throw LayoutUnderflow("text has " + std::to_string(words.size()) + " words but strokes contain only " +
                          std::to_string(groups.size()) + " pen-down groups");

  struct Extent {
    double x0, x1;
  };
  std::vector<Extent> ext;
  for (const auto& g : groups) {
    Extent e{pts[g.first].x, pts[g.first].x};
    for (std::size_t i = g.first; i <= g.last; ++i) {
      e.x0 = std::min(e.x0, pts[i].x);
      e.x1 = std::max(e.x1, pts[i].x);
    }
    ext.push_back(e);
  }

  std::vector<double> gap(groups.size(), 0.0);
  double reach = ext[0].x1;
  for (std::size_t g = 1; g < groups.size(); ++g) {
    gap[g] = ext[g].x0 - reach;
    reach = std::max(reach, ext[g].x1);
  }
  std::vector<std::size_t> order(groups.size() - 1);
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gap[a] > gap[b]; });
  std::vector<std::size_t> cuts(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(words.size() - 1));
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(groups.size());

  std::vector<Box> boxes;
  std::size_t start = 0;
  for (std::size_t cut : cuts) {
    Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t g = start; g < cut; ++g)
      for (std::size_t i = groups[g].first; i <= groups[g].last; ++i) {
        b.x0 = std::min(b.x0, pts[i].x);
        b.y0 = std::min(b.y0, pts[i].y);
        b.x1 = std::max(b.x1, pts[i].x);
        b.y1 = std::max(b.y1, pts[i].y);
      }
    boxes.push_back(detail::pad_degenerate(b));
    start = cut;
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return a.x0 < b.x0; });

  WordLayout layout;
  for (std::size_t w = 0; w < words.size(); ++w) layout.boxes.push_back({words[w], boxes[w]});
  return layout;
}

/// Fraction of inked points (absolute, from the origin) inside the union of
/// the layout boxes dilated by `dilation`.
inline double layout_adherence(const StrokeSequence& strokes, const WordLayout& layout, double dilation = 0.15) {
  const auto pts = offsets_to_absolute(strokes);
  std::size_t ink = 0, inside = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!is_ink(std::span<const AbsolutePoint>(pts), i)) continue;
    ++ink;
    for (const auto& b : layout.boxes)
      if (b.bbox.dilated(dilation).contains(pts[i].x, pts[i].y)) {
        ++inside;
        break;
      }
  }
  return ink ? static_cast<double>(inside) / ink : 0.0;
}

}  // namespace strokegen
