#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/nn/layers.hpp"
#include "strokegen/raster.hpp"
#include "strokegen/random.hpp"

namespace strokegen {

struct ImageSize {
  int height = 0;
  int width = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Geometry and capacity of the multi-scale patch encoder. Scale 0 is the
/// full-resolution image; `scales` lists the downsampled variants.
struct MultiScaleConfig {
  ImageSize full{128, 1024};
  std::vector<ImageSize> scales{{96, 768}, {64, 512}};
  int patch = 16;
  int grid_h = 4;
  int grid_w = 32;
  int dim = 96;
  int heads = 4;
  int layers = 4;
  int mlp_ratio = 4;
  int channels = 1;
  ImageSize local_crop{77, 384};
  double line_width = 2.0;  // stroke width used when rendering style images

  static MultiScaleConfig full_size() { return {}; }

  // Quarter-resolution geometry for CPU training; same grid and aspect.
  static MultiScaleConfig toy() {
    MultiScaleConfig c;
    c.full = {32, 256};
    c.scales = {{24, 192}, {16, 128}};
    c.patch = 8;
    c.local_crop = {19, 96};
    c.line_width = 1.0;
    return c;
  }

  int num_scales() const { return 1 + static_cast<int>(scales.size()); }

  ImageSize size_of(int k) const { return k == 0 ? full : scales.at(static_cast<std::size_t>(k - 1)); }

  int patch_dim() const { return patch * patch * channels; }

  int token_count() const {
    int n = 0;
    for (int k = 0; k < num_scales(); ++k) n += (size_of(k).height / patch) * (size_of(k).width / patch);
    return n;
  }

  void validate() const {
    if (patch <= 0) throw InvalidArgument("patch size must be positive");
    for (int k = 0; k < num_scales(); ++k) {
      const auto s = size_of(k);
      if (s.height <= 0 || s.width <= 0) throw InvalidArgument("scale sizes must be positive");
      if (s.height % patch || s.width % patch)
        throw InvalidArgument("scale " + std::to_string(k) + " (" + std::to_string(s.height) + "x" +
                              std::to_string(s.width) + ") is not divisible by the patch size");
      if (k > 0 && (s.height > full.height || s.width > full.width))
        throw InvalidArgument("downsampled scales must not exceed the full resolution");
    }
    if (grid_h <= 0 || grid_w <= 0) throw InvalidArgument("grid must be positive");
    if (grid_h > full.height / patch || grid_w > full.width / patch)
      throw InvalidArgument("grid is finer than the full-resolution patch grid");
    if (dim <= 0 || heads <= 0 || dim % heads) throw InvalidArgument("dim must be a positive multiple of heads");
    if (layers < 0 || mlp_ratio <= 0) throw InvalidArgument("invalid trunk depth or MLP ratio");
    if (channels != 1 && channels != 3) throw InvalidArgument("channels must be 1 or 3");
    if (local_crop.height <= 0 || local_crop.width <= 0 || local_crop.height > full.height ||
        local_crop.width > full.width)
      throw InvalidArgument("local crop must fit inside the full image");
  }
};

/// Gaussian blur (sigma = half the per-axis reduction factor) followed by
/// bilinear resampling. Only reductions are allowed.
inline RasterImage gaussian_downsample(const RasterImage& img, ImageSize target) {
  img.validate();
  if (target.height <= 0 || target.width <= 0) throw InvalidArgument("target size must be positive");
  if (target.height > img.height || target.width > img.width)
    throw InvalidArgument("gaussian_downsample cannot upscale");
  const double fy = static_cast<double>(img.height) / target.height;
  const double fx = static_cast<double>(img.width) / target.width;

  auto kernel = [](double factor) {
    std::vector<double> k;
    if (factor <= 1.0) return std::vector<double>{1.0};
    const double sigma = 0.5 * factor;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      k.push_back(std::exp(-0.5 * i * i / (sigma * sigma)));
      total += k.back();
    }
    for (auto& v : k) v /= total;
    return k;
  };
  // Half-sample symmetric boundary.
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };

  const auto ky = kernel(fy), kx = kernel(fx);
  const int ry = static_cast<int>(ky.size() / 2), rx = static_cast<int>(kx.size() / 2);
  RasterImage tmp(img.height, img.width, img.channels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch) {
        double s = 0.0;
        for (int d = -rx; d <= rx; ++d) s += kx[static_cast<std::size_t>(d + rx)] * img.at(r, reflect(c + d, img.width), ch);
        tmp.at(r, c, ch) = s;
      }
  RasterImage blurred(img.height, img.width, img.channels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch) {
        double s = 0.0;
        for (int d = -ry; d <= ry; ++d) s += ky[static_cast<std::size_t>(d + ry)] * tmp.at(reflect(r + d, img.height), c, ch);
        blurred.at(r, c, ch) = std::clamp(s, 0.0, 1.0);
      }
  if (target.height == img.height && target.width == img.width) return blurred;
  return resize_bilinear(blurred, target.height, target.width);
}

struct GridCell {
  int ti = 0;
  int tj = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Hashes patch (i, j) of an H x W image with patch size P onto a
/// G_h x G_w grid proportionally, rounding down.
inline GridCell hash_spatial_index(int i, int j, int H, int W, int P, int grid_h, int grid_w) {
  if (P <= 0 || H <= 0 || W <= 0 || grid_h <= 0 || grid_w <= 0) throw InvalidArgument("sizes must be positive");
  const int rows = H / P, cols = W / P;
  if (i < 0 || i >= rows || j < 0 || j >= cols)
    throw InvalidArgument("patch index (" + std::to_string(i) + ", " + std::to_string(j) + ") outside " +
                          std::to_string(rows) + "x" + std::to_string(cols) + " patch grid");
  return {static_cast<int>(static_cast<long long>(i) * grid_h / rows),
          static_cast<int>(static_cast<long long>(j) * grid_w / cols)};
}

/// Where a token came from. Centres are in full-resolution pixels.
struct PatchInfo {
  int scale = 0;
  int i = 0;
  int j = 0;
  GridCell cell;
  double center_y = 0.0;
  double center_x = 0.0;
};

struct MultiScaleStyleFeatures {
  nn::Matrix features;  // N x D
  std::vector<PatchInfo> patches;

  Eigen::Index size() const { return features.rows(); }
};

inline std::vector<PatchInfo> patch_layout(const MultiScaleConfig& cfg) {
  std::vector<PatchInfo> out;
  for (int k = 0; k < cfg.num_scales(); ++k) {
    const auto s = cfg.size_of(k);
    const int rows = s.height / cfg.patch, cols = s.width / cfg.patch;
    const double sy = static_cast<double>(cfg.full.height) / s.height;
    const double sx = static_cast<double>(cfg.full.width) / s.width;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        out.push_back({k, i, j, hash_spatial_index(i, j, s.height, s.width, cfg.patch, cfg.grid_h, cfg.grid_w),
                       (i + 0.5) * cfg.patch * sy, (j + 0.5) * cfg.patch * sx});
  }
  return out;
}

/// Row-major patches of one image, each flattened row-major then channel.
inline nn::Matrix extract_patches(const RasterImage& img, int P) {
  if (img.height % P || img.width % P) throw InvalidArgument("image is not divisible by the patch size");
  const int rows = img.height / P, cols = img.width / P;
  nn::Matrix out(rows * cols, P * P * img.channels);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      Eigen::Index c = 0;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
          for (int ch = 0; ch < img.channels; ++ch) out(i * cols + j, c++) = img.at(i * P + y, j * P + x, ch);
    }
  return out;
}

/// Learnable patch projection plus the spatial table T (G_h*G_w rows, row
/// t_i*G_w + t_j) and scale table Q (K+1 rows).
struct PatchEmbedding {
  nn::Linear projection;
  nn::Parameter* spatial = nullptr;
  nn::Parameter* scale = nullptr;
  int grid_h = 0, grid_w = 0;

  std::array<Eigen::Index, 3> spatial_shape() const { return {grid_h, grid_w, spatial->value.cols()}; }
};

/// Token k of scale s: projection(patch) + T[t_i, t_j] + Q[s], scales in
/// order. `imgs` must hold one image per scale at the configured sizes.
inline nn::Var embed_patches(nn::Tape& t, const std::vector<RasterImage>& imgs, const MultiScaleConfig& cfg,
                             const PatchEmbedding& emb) {
  if (static_cast<int>(imgs.size()) != cfg.num_scales())
    throw InvalidArgument("expected " + std::to_string(cfg.num_scales()) + " images, got " +
                          std::to_string(imgs.size()));
  nn::Var T = t.param(*emb.spatial);
  nn::Var Q = t.param(*emb.scale);
  std::vector<nn::Var> parts;
  for (int k = 0; k < cfg.num_scales(); ++k) {
    const auto s = cfg.size_of(k);
    const auto& img = imgs[static_cast<std::size_t>(k)];
    if (img.height != s.height || img.width != s.width || img.channels != cfg.channels)
      throw InvalidArgument("scale " + std::to_string(k) + " image has the wrong shape");
    const int rows = s.height / cfg.patch, cols = s.width / cfg.patch;
    std::vector<int> cells;
    cells.reserve(static_cast<std::size_t>(rows * cols));
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const auto c = hash_spatial_index(i, j, s.height, s.width, cfg.patch, cfg.grid_h, cfg.grid_w);
        cells.push_back(c.ti * cfg.grid_w + c.tj);
      }
    nn::Var x = emb.projection(t, t.constant(extract_patches(img, cfg.patch)));
    x = x + nn::gather_rows(T, std::move(cells));
    x = nn::add_row(x, nn::slice_rows(Q, k, 1));
    parts.push_back(x);
  }
  return nn::concat_rows(parts);
}

enum class Mode { eval, train };

/// Multi-scale attention encoder with a writer-classification head.
class StyleEncoder {
 public:
  StyleEncoder(MultiScaleConfig cfg, int num_writers, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (num_writers < 1) throw InvalidArgument("num_writers must be >= 1");
    Rng rng(seed);
    embedding_.projection = nn::Linear(params_, "style.patch", cfg_.patch_dim(), cfg_.dim, rng);
    embedding_.spatial = &params_.add("style.spatial", nn::normal_init(cfg_.grid_h * cfg_.grid_w, cfg_.dim, 0.02, rng));
    embedding_.scale = &params_.add("style.scale", nn::normal_init(cfg_.num_scales(), cfg_.dim, 0.02, rng));
    embedding_.grid_h = cfg_.grid_h;
    embedding_.grid_w = cfg_.grid_w;
    for (int l = 0; l < cfg_.layers; ++l)
      blocks_.emplace_back(params_, "style.block" + std::to_string(l), cfg_.dim, cfg_.heads,
                           static_cast<Eigen::Index>(cfg_.dim) * cfg_.mlp_ratio, rng);
    final_norm_ = nn::LayerNorm(params_, "style.norm", cfg_.dim);
    head_ = nn::Linear(params_, "style.head", cfg_.dim, num_writers, rng);
    num_writers_ = num_writers;
  }

  StyleEncoder(const StyleEncoder&) = delete;
  StyleEncoder& operator=(const StyleEncoder&) = delete;
  StyleEncoder(StyleEncoder&&) = default;
  StyleEncoder& operator=(StyleEncoder&&) = default;

  const MultiScaleConfig& config() const { return cfg_; }
  int num_writers() const { return num_writers_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const PatchEmbedding& embedding() const { return embedding_; }
  const nn::Linear& head() const { return head_; }

  /// Converts to the configured channel count and full size, then builds
  /// the Gaussian pyramid.
  std::vector<RasterImage> pyramid(const RasterImage& input) const {
    RasterImage img = input;
    if (cfg_.channels == 1) {
      img = to_grayscale(img);
    } else if (img.channels == 1) {
      RasterImage rgb(img.height, img.width, 3);
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
          for (int ch = 0; ch < 3; ++ch) rgb.at(r, c, ch) = img.at(r, c);
      img = std::move(rgb);
    } else if (img.channels != cfg_.channels) {
      throw InvalidArgument("style image channel count does not match the encoder");
    }
    if (img.height != cfg_.full.height || img.width != cfg_.full.width) {
      if (img.height >= cfg_.full.height && img.width >= cfg_.full.width)
        img = gaussian_downsample(img, cfg_.full);
      else
        img = resize_bilinear(img, cfg_.full.height, cfg_.full.width);
    }
    std::vector<RasterImage> out{img};
    for (const auto& s : cfg_.scales) out.push_back(gaussian_downsample(img, s));
    return out;
  }

  nn::Var embed(nn::Tape& t, const std::vector<RasterImage>& imgs) const {
    return embed_patches(t, imgs, cfg_, embedding_);
  }

  nn::Var trunk(nn::Tape& t, nn::Var tokens) const {
    for (const auto& b : blocks_) tokens = b(t, tokens);
    return final_norm_(t, tokens);
  }

  nn::Var features(nn::Tape& t, const RasterImage& img) const { return trunk(t, embed(t, pyramid(img))); }

  nn::Var writer_logits(nn::Tape& t, nn::Var features) const { return head_(t, nn::mean_rows(features)); }

  /// Evaluation-mode forward pass.
  MultiScaleStyleFeatures encode(const RasterImage& img) const {
    nn::Tape t(false);
    nn::Var f = features(t, img);
    if (!f.value().allFinite()) throw NumericalError("style encoder produced non-finite activations");
    return {f.value(), patch_layout(cfg_)};
  }

  std::vector<double> classify(const MultiScaleStyleFeatures& f) const {
    nn::Tape t(false);
    nn::Var logits = writer_logits(t, t.constant(f.features));
    return softmax(logits.value());
  }

  static std::vector<double> softmax(const nn::Matrix& logits) {
    const double mx = logits.maxCoeff();
    std::vector<double> p(static_cast<std::size_t>(logits.size()));
    double z = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) z += (p[static_cast<std::size_t>(i)] = std::exp(logits.data()[i] - mx));
    for (auto& v : p) v /= z;
    return p;
  }

 private:
  MultiScaleConfig cfg_;
  nn::ParamStore params_;
  PatchEmbedding embedding_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
  int num_writers_ = 1;
};

/// Writer probabilities from pooled features through a linear head.
inline std::vector<double> classify_writer(const MultiScaleStyleFeatures& features, const StyleEncoder& encoder) {
  return encoder.classify(features);
}

/// Full-resolution tokens whose centres lie in a crop window, followed by
/// every coarse-scale token. Eval mode centres the window; train mode
/// places it uniformly at random.
inline MultiScaleStyleFeatures local_style_patches(const MultiScaleStyleFeatures& f, const MultiScaleConfig& cfg,
                                                   ImageSize crop, Mode mode = Mode::eval, Rng* rng = nullptr) {
  if (crop.height <= 0 || crop.width <= 0) throw InvalidArgument("crop must be positive");
  if (crop.height > cfg.full.height || crop.width > cfg.full.width)
    throw InvalidArgument("crop " + std::to_string(crop.height) + "x" + std::to_string(crop.width) +
                          " is larger than the image");
  double y0 = (cfg.full.height - crop.height) / 2.0;
  double x0 = (cfg.full.width - crop.width) / 2.0;
  if (mode == Mode::train) {
    if (!rng) throw InvalidArgument("train-mode crop needs a random generator");
    y0 = static_cast<double>(rng->below(static_cast<std::uint64_t>(cfg.full.height - crop.height) + 1));
    x0 = static_cast<double>(rng->below(static_cast<std::uint64_t>(cfg.full.width - crop.width) + 1));
  }
  std::vector<Eigen::Index> keep;
  for (std::size_t n = 0; n < f.patches.size(); ++n) {
    const auto& p = f.patches[n];
    if (p.scale != 0 || (p.center_y >= y0 && p.center_y <= y0 + crop.height && p.center_x >= x0 &&
                         p.center_x <= x0 + crop.width))
      keep.push_back(static_cast<Eigen::Index>(n));
  }
  MultiScaleStyleFeatures out;
  out.features.resize(static_cast<Eigen::Index>(keep.size()), f.features.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = f.features.row(keep[r]);
    out.patches.push_back(f.patches[static_cast<std::size_t>(keep[r])]);
  }
  return out;
}

}  // namespace strokegen
