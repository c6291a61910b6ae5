#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/stroke.hpp"

namespace strokegen {

/// Row-major, channel-interleaved image with values in [0, 1]; 1 is white.
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;

  RasterImage() = default;
  RasterImage(int h, int w, int c = 1, double fill = 1.0) : height(h), width(w), channels(c) {
    if (h <= 0 || w <= 0 || c <= 0) throw InvalidArgument("image dimensions must be positive");
    pixels.assign(static_cast<std::size_t>(h) * w * c, fill);
  }

  double& at(int r, int c, int ch = 0) {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  double at(int r, int c, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  std::size_t size() const { return pixels.size(); }

  bool same_shape(const RasterImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || channels <= 0)
      throw InvalidArgument("image dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
      throw InvalidArgument("pixel buffer does not match image dimensions");
    for (double v : pixels)
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("pixel value outside [0,1]");
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

struct RenderGeometry {
  double margin = 0.0;  // pixels
  double scale = 0.0;   // pixels per line-height unit
};

// Line-height units map to pixels with a margin of height/8 on every side.
inline RenderGeometry render_geometry(int height) {
  const double margin = height / 8.0;
  return {margin, height - 2.0 * margin};
}

inline double default_line_width(int height) { return std::max(1.0, 2.0 * height / 128.0); }

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Coverage of a disc-capped line of width `lw` at distance `d`, with a
// one-pixel linear ramp.
inline double coverage(double d, double lw) { return std::clamp(lw / 2.0 + 0.5 - d, 0.0, 1.0); }

inline void draw_segment(RasterImage& img, double ax, double ay, double bx, double by, double lw) {
  const double reach = lw / 2.0 + 1.0;
  const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach)));
  const int r1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach)));
  const int c1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double cov = coverage(segment_distance(c + 0.5, r + 0.5, ax, ay, bx, by), lw);
      if (cov <= 0.0) continue;
      for (int ch = 0; ch < img.channels; ++ch) {
        double& px = img.at(r, c, ch);
        px = std::min(px, 1.0 - cov);
      }
    }
  }
}

}  // namespace detail

/// Draws pen-down segments as dark anti-aliased lines on white. A segment
/// joins point i to i+1 when point i has pen = 0; a trailing pen-down point
/// is drawn as a dot.
inline RasterImage render(const StrokeSequence& seq, int height, int width, double line_width,
                          int channels = 1) {
  if (height <= 0 || width <= 0 || channels <= 0)
    throw InvalidArgument("render dimensions must be positive");
  if (!(line_width > 0.0)) throw InvalidArgument("line width must be positive");
  RasterImage img(height, width, channels, 1.0);
  const auto pts = offsets_to_absolute(seq);
  const auto g = render_geometry(height);
  auto px = [&](const AbsolutePoint& p) { return std::pair{g.margin + p.x * g.scale, g.margin + p.y * g.scale}; };
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].pen != kPenDown) continue;
    const auto [ax, ay] = px(pts[i]);
    if (i + 1 < pts.size()) {
      const auto [bx, by] = px(pts[i + 1]);
      detail::draw_segment(img, ax, ay, bx, by, line_width);
    } else {
      detail::draw_segment(img, ax, ay, ax, ay, line_width);
    }
  }
  return img;
}

inline RasterImage to_grayscale(const RasterImage& img) {
  if (img.channels == 1) return img;
  RasterImage out(img.height, img.width, 1);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double s = 0.0;
      for (int ch = 0; ch < img.channels; ++ch) s += img.at(r, c, ch);
      out.at(r, c) = s / img.channels;
    }
  return out;
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
inline RasterImage resize_bilinear(const RasterImage& img, int h, int w) {
  if (h <= 0 || w <= 0) throw InvalidArgument("target size must be positive");
  RasterImage out(h, w, img.channels);
  const double sy = static_cast<double>(img.height) / h;
  const double sx = static_cast<double>(img.width) / w;
  for (int r = 0; r < h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < img.channels; ++ch) {
        const double top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
        const double bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
        out.at(r, c, ch) = std::clamp(top * (1 - wy) + bot * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

// Binary PGM (P5, maxval 255) for single-channel images.
inline void write_pgm(const RasterImage& img, const std::string& path) {
  const RasterImage g = to_grayscale(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot open " + path + " for writing");
  os << "P5\n" << g.width << ' ' << g.height << "\n255\n";
  for (double v : g.pixels) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(b));
  }
  if (!os) throw InvalidArgument("failed writing " + path);
}

inline RasterImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidArgument("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (t.empty()) {
      int ch = is.get();
      if (ch == EOF) throw InvalidArgument(path + ": truncated PGM header");
      if (ch == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      if (std::isspace(ch)) continue;
      t += static_cast<char>(ch);
      while ((ch = is.peek()) != EOF && !std::isspace(ch)) t += static_cast<char>(is.get());
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw InvalidArgument(path + ": not a PGM file");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw InvalidArgument(path + ": unsupported PGM header");
  RasterImage img(h, w, 1);
  if (magic == "P5") {
    is.get();
    for (auto& v : img.pixels) {
      const int b = is.get();
      if (b == EOF) throw InvalidArgument(path + ": truncated PGM data");
      v = static_cast<double>(b) / maxval;
    }
  } else {
    for (auto& v : img.pixels) v = std::stod(token()) / maxval;
  }
  return img;
}

}  // namespace strokegen
