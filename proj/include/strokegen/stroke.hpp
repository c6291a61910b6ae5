#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strokegen/errors.hpp"

namespace strokegen {

// Pen convention: 0 = the pen is writing from this point to the next one,
// 1 = the pen is lifted after this point.
inline constexpr std::uint8_t kPenDown = 0;
inline constexpr std::uint8_t kPenUp = 1;

struct StrokePoint {
  double dx = 0.0;
  double dy = 0.0;
  std::uint8_t pen = kPenDown;

  friend bool operator==(const StrokePoint&, const StrokePoint&) = default;
};

struct AbsolutePoint {
  double x = 0.0;
  double y = 0.0;
  std::uint8_t pen = kPenDown;

  friend bool operator==(const AbsolutePoint&, const AbsolutePoint&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  Box dilated(double r) const { return {x0 - r, y0 - r, x1 + r, y1 + r}; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Pen trajectory stored as offsets from the previous point. The first
/// offset is relative to the drawing origin.
class StrokeSequence {
 public:
  StrokeSequence() = default;
  explicit StrokeSequence(std::vector<StrokePoint> points) : points_(std::move(points)) { validate(); }

  const std::vector<StrokePoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const StrokePoint& operator[](std::size_t i) const { return points_[i]; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  // Real-valued half (N x 2, row-major) and pen bits.
  std::vector<double> offsets() const {
    std::vector<double> out;
    out.reserve(points_.size() * 2);
    for (const auto& p : points_) {
      out.push_back(p.dx);
      out.push_back(p.dy);
    }
    return out;
  }
  std::vector<std::uint8_t> pens() const {
    std::vector<std::uint8_t> out;
    out.reserve(points_.size());
    for (const auto& p : points_) out.push_back(p.pen);
    return out;
  }

  void validate() const {
    if (points_.empty()) throw InvalidStroke("stroke sequence must contain at least one point");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!std::isfinite(p.dx) || !std::isfinite(p.dy))
        throw InvalidStroke("non-finite offset at point " + std::to_string(i));
      if (p.pen > 1) throw InvalidStroke("pen state must be 0 or 1 at point " + std::to_string(i));
    }
  }

  friend bool operator==(const StrokeSequence&, const StrokeSequence&) = default;

 private:
  std::vector<StrokePoint> points_;
};

// A point carries ink when a segment is drawn into or out of it.
template <typename P>
bool is_ink(std::span<const P> pts, std::size_t i) {
  return pts[i].pen == kPenDown || (i > 0 && pts[i - 1].pen == kPenDown);
}

inline std::vector<AbsolutePoint> offsets_to_absolute(const StrokeSequence& seq, Point2 origin = {}) {
  seq.validate();
  std::vector<AbsolutePoint> out;
  out.reserve(seq.size());
  double x = origin.x, y = origin.y;
  for (const auto& p : seq) {
    x += p.dx;
    y += p.dy;
    out.push_back({x, y, p.pen});
  }
  return out;
}

inline StrokeSequence absolute_to_offsets(std::span<const AbsolutePoint> pts, Point2 origin = {}) {
  if (pts.empty()) throw InvalidStroke("cannot convert an empty point list");
  std::vector<StrokePoint> out;
  out.reserve(pts.size());
  double px = origin.x, py = origin.y;
  for (const auto& p : pts) {
    out.push_back({p.x - px, p.y - py, p.pen});
    px = p.x;
    py = p.y;
  }
  return StrokeSequence(std::move(out));
}

inline std::vector<AbsolutePoint> ink_points(std::span<const AbsolutePoint> pts) {
  std::vector<AbsolutePoint> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (is_ink(pts, i)) out.push_back(pts[i]);
  return out;
}

/// Bounding box of the inked points; throws DegenerateStroke if none.
inline Box ink_box(std::span<const AbsolutePoint> pts) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool any = false;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!is_ink(pts, i)) continue;
    any = true;
    b.x0 = std::min(b.x0, pts[i].x);
    b.y0 = std::min(b.y0, pts[i].y);
    b.x1 = std::max(b.x1, pts[i].x);
    b.y1 = std::max(b.y1, pts[i].y);
  }
  if (!any) throw DegenerateStroke("sequence has no pen-down points");
  return b;
}

/// Scales to unit ink height and moves the ink bounding box's min corner to
/// the origin. Aspect ratio is preserved.
inline StrokeSequence normalize(const StrokeSequence& seq) {
  const auto abs = offsets_to_absolute(seq);
  const Box b = ink_box(std::span<const AbsolutePoint>(abs));
  const double h = b.height();
  if (!(h > 1e-12)) throw DegenerateStroke("ink bounding box has zero height");
  std::vector<AbsolutePoint> out;
  out.reserve(abs.size());
  for (const auto& p : abs) out.push_back({(p.x - b.x0) / h, (p.y - b.y0) / h, p.pen});
  return absolute_to_offsets(out);
}

inline StrokeSequence scaled(const StrokeSequence& seq, double c) {
  std::vector<StrokePoint> pts(seq.begin(), seq.end());
  for (auto& p : pts) {
    p.dx *= c;
    p.dy *= c;
  }
  return StrokeSequence(std::move(pts));
}

}  // namespace strokegen
