#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "strokegen/diffusion/losses.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/nn/layers.hpp"

namespace strokegen::diffusion {

struct DenoiserConfig {
  int dim = 64;
  int cond_dim = 64;
  int heads = 4;
  int layers = 3;
  int mlp_ratio = 2;
  int pos_features = 16;
  int time_features = 16;
  double position_scale = 0.05;  // absolute line units -> Fourier input

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads) throw InvalidArgument("denoiser dim must be a multiple of heads");
    if (cond_dim <= 0 || layers < 0 || mlp_ratio <= 0) throw InvalidArgument("invalid denoiser config");
    if (pos_features <= 0 || pos_features % 2 || time_features <= 0 || time_features % 2)
      throw InvalidArgument("feature counts must be positive and even");
  }
};

struct DenoiserOutput {
  nn::Var eps;  // N x 2
  nn::Var pen;  // N x 1, clamped into (0, 1)
};

/// Stroke tokens: projected offsets and running position, plus Fourier
/// features of sequence progress, glyph index (point index over
/// `points_per_glyph`), the word of that glyph and absolute position.
/// `data_scale` maps model offsets back to line units. `glyph_words` holds
/// word index / word count per glyph; empty means a single word.
struct StrokeEmbedding {
  nn::Linear values, positions;
  int pos_features = 16;
  double position_scale = 0.05;

  StrokeEmbedding() = default;
  StrokeEmbedding(nn::ParamStore& store, const std::string& name, const DenoiserConfig& cfg, Rng& rng)
      : values(store, name + ".values", 4, cfg.dim, rng),
        positions(store, name + ".positions", 5 * cfg.pos_features, cfg.dim, rng, false),
        pos_features(cfg.pos_features),
        position_scale(cfg.position_scale) {}

  static nn::Matrix running_position(const nn::Matrix& y, const std::array<double, 2>& data_scale) {
    nn::Matrix abs(y.rows(), 2);
    double x = 0.0, v = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      x += y(i, 0) * data_scale[0];
      v += y(i, 1) * data_scale[1];
      abs(i, 0) = x;
      abs(i, 1) = v;
    }
    return abs;
  }

  nn::Var operator()(nn::Tape& t, const nn::Matrix& y, const std::array<double, 2>& data_scale,
                     double points_per_glyph, const std::vector<double>& glyph_words = {}) const {
    if (!(points_per_glyph > 0.0)) throw InvalidArgument("points_per_glyph must be positive");
    const Eigen::Index n = y.rows();
    if (n == 0 || y.cols() != 2) throw InvalidArgument("stroke input must be N x 2 with N >= 1");
    const nn::Matrix abs = running_position(y, data_scale);
    nn::Matrix v(n, 4);
    v << y, abs * 0.1;
    std::vector<double> progress, index, word, ax, ay;
    for (Eigen::Index i = 0; i < n; ++i) {
      progress.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(n));
      index.push_back((static_cast<double>(i) + 0.5) / points_per_glyph);
      if (glyph_words.empty()) {
        word.push_back(0.0);
      } else {
        const auto g = static_cast<std::size_t>(static_cast<double>(i) / points_per_glyph);
        word.push_back(glyph_words[std::min(g, glyph_words.size() - 1)]);
      }
      ax.push_back(abs(i, 0) * position_scale);
      ay.push_back(abs(i, 1));
    }
    nn::Matrix p(n, 5 * pos_features);
    p << nn::fourier_features(progress, pos_features, 32.0), nn::glyph_index_features(index, pos_features),
        nn::fourier_features(word, pos_features, 4.0), nn::fourier_features(ax, pos_features, 64.0),
        nn::fourier_features(ay, pos_features, 4.0);
    return values(t, t.constant(std::move(v))) + positions(t, t.constant(std::move(p)));
  }
};

/// Pre-norm block with self-attention over stroke tokens, cross-attention to
/// the conditioning sequence and an MLP. Each sublayer's normalized input is
/// modulated by a shift and scale computed from the noise level.
struct DenoiserBlock {
  nn::MultiHeadAttention self_attn, cross_attn;
  nn::FeedForward ff;

  DenoiserBlock() = default;
  DenoiserBlock(nn::ParamStore& store, const std::string& name, const DenoiserConfig& cfg, Rng& rng)
      : self_attn(store, name + ".self", cfg.dim, cfg.dim, cfg.heads, rng),
        cross_attn(store, name + ".cross", cfg.dim, cfg.cond_dim, cfg.heads, rng),
        ff(store, name + ".ff", cfg.dim, static_cast<Eigen::Index>(cfg.dim) * cfg.mlp_ratio, rng) {}
};

class Denoiser {
 public:
  Denoiser(nn::ParamStore& store, DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const Eigen::Index D = cfg_.dim;
    embed_ = StrokeEmbedding(store, "denoiser.embed", cfg_, rng);
    time_in_ = nn::Linear(store, "denoiser.time.in", cfg_.time_features, D, rng);
    time_out_ = nn::Linear(store, "denoiser.time.out", D, 6 * D * std::max(cfg_.layers, 1), rng, true, 0.1);
    for (int l = 0; l < cfg_.layers; ++l) blocks_.emplace_back(store, "denoiser.block" + std::to_string(l), cfg_, rng);
    eps_head_ = nn::Linear(store, "denoiser.eps", D, 2, rng);
    pen_head_ = nn::Linear(store, "denoiser.pen", D, 1, rng);
  }

  const DenoiserConfig& config() const { return cfg_; }
  const std::vector<DenoiserBlock>& blocks() const { return blocks_; }

  nn::Var tokens(nn::Tape& t, const nn::Matrix& y, const std::array<double, 2>& data_scale,
                 double points_per_glyph, const std::vector<double>& glyph_words = {}) const {
    return embed_(t, y, data_scale, points_per_glyph, glyph_words);
  }

  /// Noise and pen predictions for stroke tokens `x` given `cond`.
  DenoiserOutput operator()(nn::Tape& t, nn::Var x, nn::Var cond, double sqrt_alpha_bar) const {
    if (cond.cols() != cfg_.cond_dim) throw InvalidArgument("denoiser: conditioning width mismatch");
    const Eigen::Index D = cfg_.dim;
    nn::Var temb = nn::silu(time_in_(t, t.constant(nn::fourier_features({sqrt_alpha_bar}, cfg_.time_features, 16.0))));
    nn::Var mod = time_out_(t, temb);
    const nn::Var ones = t.constant(nn::Matrix::Ones(1, D));
    const nn::Var zeros = t.constant(nn::Matrix::Zero(1, D));
    auto modulated = [&](nn::Var h, Eigen::Index slot) {
      nn::Var shift = nn::slice_cols(mod, slot * D, D);
      nn::Var scale = nn::slice_cols(mod, (slot + 1) * D, D);
      return nn::add_row(nn::mul_row(nn::layer_norm(h, ones, zeros), scale + ones), shift);
    };
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const Eigen::Index base = static_cast<Eigen::Index>(6 * l);
      nn::Var h = modulated(x, base);
      x = x + b.self_attn(t, h, h);
      x = x + b.cross_attn(t, modulated(x, base + 2), cond);
      x = x + b.ff(t, modulated(x, base + 4));
    }
    nn::Var out = nn::layer_norm(x, ones, zeros);
    DenoiserOutput r{eps_head_(t, out), nn::clamp(nn::sigmoid(pen_head_(t, out)), kPenClamp, 1.0 - kPenClamp)};
    if (!r.eps.value().allFinite() || !r.pen.value().allFinite())
      throw NumericalError("denoiser produced non-finite output");
    return r;
  }

 private:
  DenoiserConfig cfg_;
  StrokeEmbedding embed_;
  nn::Linear time_in_, time_out_;
  std::vector<DenoiserBlock> blocks_;
  nn::Linear eps_head_, pen_head_;
};

}  // namespace strokegen::diffusion
