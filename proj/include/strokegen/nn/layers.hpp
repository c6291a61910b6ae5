#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "strokegen/nn/ops.hpp"
#include "strokegen/nn/tape.hpp"
#include "strokegen/random.hpp"

namespace strokegen::nn {

inline Matrix xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix m(in, out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

inline Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out, optional

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
         bool with_bias = true, double gain = 1.0) {
    weight = &store.add(name + ".weight", xavier_uniform(in, out, rng, gain));
    if (with_bias) bias = &store.add(name + ".bias", Matrix::Zero(1, out));
  }

  Var operator()(Tape& t, Var x) const {
    Var y = matmul(x, t.param(*weight));
    if (bias) y = add_row(y, t.param(*bias));
    return y;
  }

  Eigen::Index in_features() const { return weight->value.rows(); }
  Eigen::Index out_features() const { return weight->value.cols(); }
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index dim) {
    gamma = &store.add(name + ".gamma", Matrix::Ones(1, dim));
    beta = &store.add(name + ".beta", Matrix::Zero(1, dim));
  }

  Var operator()(Tape& t, Var x) const { return layer_norm(x, t.param(*gamma), t.param(*beta)); }
};

struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, Eigen::Index dim, Eigen::Index hidden, Rng& rng)
      : up(store, name + ".up", dim, hidden, rng), down(store, name + ".down", hidden, dim, rng) {}

  Var operator()(Tape& t, Var x) const { return down(t, gelu(up(t, x))); }
};

/// Multi-head attention with query, key, value and output projections.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, Eigen::Index dim, Eigen::Index context_dim,
                     int num_heads, Rng& rng, bool out_bias = true)
      : q(store, name + ".q", dim, dim, rng, false),
        k(store, name + ".k", context_dim, dim, rng, false),
        v(store, name + ".v", context_dim, dim, rng, false),
        o(store, name + ".o", dim, dim, rng, out_bias),
        heads(num_heads) {}

  Var operator()(Tape& t, Var x, Var context, std::vector<Matrix>* probs = nullptr) const {
    return o(t, attention(q(t, x), k(t, context), v(t, context), heads, probs));
  }
};

/// Pre-norm self-attention block.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ff;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, Eigen::Index dim, int heads, Eigen::Index hidden,
                   Rng& rng)
      : ln1(store, name + ".ln1", dim),
        ln2(store, name + ".ln2", dim),
        attn(store, name + ".attn", dim, dim, heads, rng),
        ff(store, name + ".ff", dim, hidden, rng) {}

  Var operator()(Tape& t, Var x) const {
    Var h = ln1(t, x);
    x = x + attn(t, h, h);
    return x + ff(t, ln2(t, x));
  }
};

/// Sin/cos features of scalars: column 2k is sin(pi*f_k*x), 2k+1 is
/// cos(pi*f_k*x), with f_k geometric from 1 to max_freq.
inline Matrix fourier_features(const std::vector<double>& xs, Eigen::Index dim, double max_freq) {
  if (dim % 2 != 0) throw InvalidArgument("fourier feature width must be even");
  const Eigen::Index pairs = dim / 2;
  Matrix out(static_cast<Eigen::Index>(xs.size()), dim);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (Eigen::Index k = 0; k < pairs; ++k) {
      const double f = pairs > 1 ? std::pow(max_freq, static_cast<double>(k) / (pairs - 1)) : 1.0;
      const double a = std::numbers::pi * f * xs[i];
      out(static_cast<Eigen::Index>(i), 2 * k) = std::sin(a);
      out(static_cast<Eigen::Index>(i), 2 * k + 1) = std::cos(a);
    }
  }
  return out;
}

/// Features of positions measured in glyphs: periods from 32 glyphs down
/// to a quarter glyph.
inline Matrix glyph_index_features(const std::vector<double>& u, Eigen::Index dim) {
  std::vector<double> scaled;
  scaled.reserve(u.size());
  for (double v : u) scaled.push_back(v / 16.0);
  return fourier_features(scaled, dim, 128.0);
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
};

/// Adam with decoupled weight decay and global-norm gradient clipping.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opt) : opt_(opt) {}

  const AdamOptions& options() const { return opt_; }
  AdamOptions& options() { return opt_; }
  long step_count() const { return step_; }

  void step(ParamStore& store) {
    ++step_;
    double scale = 1.0;
    if (opt_.clip_norm > 0) {
      double sq = 0.0;
      for (const auto& p : store)
        if (p.trainable) sq += p.grad.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > opt_.clip_norm) scale = opt_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (auto& p : store) {
      if (!p.trainable) continue;
      auto& st = state_[p.name];
      if (st.m.size() == 0) {
        st.m.setZero(p.value.rows(), p.value.cols());
        st.v.setZero(p.value.rows(), p.value.cols());
      }
      const Matrix g = p.grad * scale;
      st.m = opt_.beta1 * st.m + (1.0 - opt_.beta1) * g;
      st.v = opt_.beta2 * st.v + (1.0 - opt_.beta2) * g.cwiseAbs2();
      if (opt_.weight_decay > 0) p.value *= 1.0 - opt_.lr * opt_.weight_decay;
      p.value.array() -= opt_.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + opt_.eps);
    }
  }

  struct Moments {
    Matrix m, v;
  };
  std::unordered_map<std::string, Moments>& state() { return state_; }
  const std::unordered_map<std::string, Moments>& state() const { return state_; }
  void set_step_count(long s) { step_ = s; }

 private:
  AdamOptions opt_;
  long step_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace strokegen::nn
