#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "strokegen/nn/tape.hpp"

namespace strokegen::nn {

namespace detail {

inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InvalidArgument("vars belong to different tapes");
}

inline void check_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimensions differ");
  Matrix out;
  out.noalias() = a.value() * b.value();
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad() || b.needs_grad(), [t, a, b](const Matrix& g) {
    if (a.needs_grad()) t->grad(a.id()).noalias() += g * b.value().transpose();
    if (b.needs_grad()) t->grad(b.id()).noalias() += a.value().transpose() * g;
  });
}

// a * b^T
inline Var matmul_bt(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.cols()) throw InvalidArgument("matmul_bt: inner dimensions differ");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad() || b.needs_grad(), [t, a, b](const Matrix& g) {
    if (a.needs_grad()) t->grad(a.id()).noalias() += g * b.value();
    if (b.needs_grad()) t->grad(b.id()).noalias() += g.transpose() * a.value();
  });
}

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a, b, "add");
  Tape* t = a.tape();
  return t->make(a.value() + b.value(), a.needs_grad() || b.needs_grad(), [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a, b, "sub");
  Tape* t = a.tape();
  return t->make(a.value() - b.value(), a.needs_grad() || b.needs_grad(), [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    if (b.needs_grad()) t->grad(b.id()) -= g;
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a, b, "mul");
  Tape* t = a.tape();
  return t->make(a.value().cwiseProduct(b.value()), a.needs_grad() || b.needs_grad(), [t, a, b](const Matrix& g) {
    if (a.needs_grad()) t->grad(a.id()) += g.cwiseProduct(b.value());
    if (b.needs_grad()) t->grad(b.id()) += g.cwiseProduct(a.value());
  });
}

inline Var scale(Var a, double s) {
  Tape* t = a.tape();
  return t->make(a.value() * s, a.needs_grad(), [t, a, s](const Matrix& g) { t->grad(a.id()) += g * s; });
}

// a (n x c) + r (1 x c) broadcast over rows.
inline Var add_row(Var a, Var r) {
  detail::check_same_tape(a, r);
  if (r.rows() != 1 || r.cols() != a.cols()) throw InvalidArgument("add_row: row vector width mismatch");
  Matrix out = a.value();
  out.rowwise() += r.value().row(0);
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad() || r.needs_grad(), [t, a, r](const Matrix& g) {
    t->accumulate(a, g);
    if (r.needs_grad()) t->grad(r.id()) += g.colwise().sum();
  });
}

// a (n x c) * r (1 x c) broadcast over rows.
inline Var mul_row(Var a, Var r) {
  detail::check_same_tape(a, r);
  if (r.rows() != 1 || r.cols() != a.cols()) throw InvalidArgument("mul_row: row vector width mismatch");
  Matrix out = a.value().array().rowwise() * r.value().row(0).array();
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad() || r.needs_grad(), [t, a, r](const Matrix& g) {
    if (a.needs_grad()) t->grad(a.id()).array() += g.array().rowwise() * r.value().row(0).array();
    if (r.needs_grad()) t->grad(r.id()) += g.cwiseProduct(a.value()).colwise().sum();
  });
}

inline Var repeat_rows(Var r, Eigen::Index n) {
  if (r.rows() != 1) throw InvalidArgument("repeat_rows expects a row vector");
  Matrix out = r.value().replicate(n, 1);
  Tape* t = r.tape();
  return t->make(std::move(out), r.needs_grad(), [t, r](const Matrix& g) { t->grad(r.id()) += g.colwise().sum(); });
}

namespace detail {

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(), [t, a, df](const Matrix& g) {
    t->grad(a.id()) += g.cwiseProduct(a.value().unaryExpr(df));
  });
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

// tanh approximation
inline Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
      [](double x) {
        const double u = k * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3 * 0.044715 * x * x);
      });
}

inline Var silu(Var a) {
  return detail::unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  Matrix y = out;
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(), [t, a, y = std::move(y)](const Matrix& g) {
    t->grad(a.id()).array() += g.array() * (1.0 - y.array().square());
  });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Tape* t = a.tape();
  Matrix y = out;
  return t->make(std::move(out), a.needs_grad(), [t, a, y = std::move(y)](const Matrix& g) {
    t->grad(a.id()).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

inline Var square(Var a) {
  Tape* t = a.tape();
  return t->make(a.value().cwiseAbs2(), a.needs_grad(),
                 [t, a](const Matrix& g) { t->grad(a.id()) += 2.0 * g.cwiseProduct(a.value()); });
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(),
                 [t, a](const Matrix& g) { t->grad(a.id()).array() += g(0, 0); });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

// Column means: (n x c) -> (1 x c)
inline Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().mean();
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(), [t, a, n](const Matrix& g) {
    t->grad(a.id()).rowwise() += g.row(0) / n;
  });
}

inline Var softmax_rows(Var a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Tape* t = a.tape();
  Matrix yc = y;
  return t->make(std::move(y), a.needs_grad(), [t, a, y = std::move(yc)](const Matrix& g) {
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd s = gy.rowwise().sum();
    gy.array() -= y.array().colwise() * s.array();
    t->grad(a.id()) += gy;
  });
}

/// Row-wise layer normalization with per-column gain and bias.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw InvalidArgument("layer_norm: parameter width mismatch");
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  Tape* t = x.tape();
  const bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  return t->make(std::move(out), ng, [t, x, gamma, beta, xhat = std::move(xhat), inv_std](const Matrix& g) {
    if (gamma.needs_grad()) t->grad(gamma.id()) += g.cwiseProduct(xhat).colwise().sum();
    if (beta.needs_grad()) t->grad(beta.id()) += g.colwise().sum();
    if (x.needs_grad()) {
      Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
      const double cc = static_cast<double>(xhat.cols());
      Matrix& gx = t->grad(x.id());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / cc;
        const double m2 = dxhat.row(r).dot(xhat.row(r)) / cc;
        gx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols()) throw InvalidArgument("slice_cols out of range");
  Matrix out = a.value().middleCols(c0, n);
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(),
                 [t, a, c0, n](const Matrix& g) { t->grad(a.id()).middleCols(c0, n) += g; });
}

inline Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows()) throw InvalidArgument("slice_rows out of range");
  Matrix out = a.value().middleRows(r0, n);
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(),
                 [t, a, r0, n](const Matrix& g) { t->grad(a.id()).middleRows(r0, n) += g; });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows of nothing");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index n = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != c) throw InvalidArgument("concat_rows: width mismatch");
    n += p.rows();
    ng = ng || p.needs_grad();
  }
  Matrix out(n, c);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  Tape* t = parts[0].tape();
  return t->make(std::move(out), ng, [t, parts](const Matrix& g) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t->grad(p.id()) += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
  const Eigen::Index n = parts[0].rows();
  Eigen::Index c = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != n) throw InvalidArgument("concat_cols: height mismatch");
    c += p.cols();
    ng = ng || p.needs_grad();
  }
  Matrix out(n, c);
  Eigen::Index k = 0;
  for (const auto& p : parts) {
    out.middleCols(k, p.cols()) = p.value();
    k += p.cols();
  }
  Tape* t = parts[0].tape();
  return t->make(std::move(out), ng, [t, parts](const Matrix& g) {
    Eigen::Index k = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t->grad(p.id()) += g.middleCols(k, p.cols());
      k += p.cols();
    }
  });
}

/// Row lookup: out[i] = table[idx[i]].
inline Var gather_rows(Var table, std::vector<int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), table.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table.rows()) throw InvalidArgument("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(idx[i]);
  }
  Tape* t = table.tape();
  return t->make(std::move(out), table.needs_grad(), [t, table, idx = std::move(idx)](const Matrix& g) {
    Matrix& gt = t->grad(table.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Scaled dot-product attention split into `heads` column groups.
/// q: n x d, k: m x d, v: m x dv. Optional `probs` receives the per-head
/// weight matrices (n x m each).
inline Var attention(Var q, Var k, Var v, int heads, std::vector<Matrix>* probs = nullptr) {
  detail::check_same_tape(q, k);
  detail::check_same_tape(q, v);
  const Eigen::Index n = q.rows(), m = k.rows(), d = q.cols(), dv = v.cols();
  if (k.cols() != d) throw InvalidArgument("attention: query/key widths differ");
  if (v.rows() != m) throw InvalidArgument("attention: key/value lengths differ");
  if (m == 0) throw InvalidArgument("attention over an empty key set");
  if (heads < 1 || d % heads != 0 || dv % heads != 0) throw InvalidArgument("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads, dvh = dv / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> p(static_cast<std::size_t>(heads));
  Matrix out(n, dv);
  for (int h = 0; h < heads; ++h) {
    Matrix& ph = p[static_cast<std::size_t>(h)];
    ph.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
    ph *= s;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mx = ph.row(r).maxCoeff();
      ph.row(r) = (ph.row(r).array() - mx).exp();
      ph.row(r) /= ph.row(r).sum();
    }
    out.middleCols(h * dvh, dvh).noalias() = ph * v.value().middleCols(h * dvh, dvh);
  }
  if (probs) *probs = p;
  Tape* t = q.tape();
  const bool ng = q.needs_grad() || k.needs_grad() || v.needs_grad();
  return t->make(std::move(out), ng, [t, q, k, v, heads, dh, dvh, s, p = std::move(p)](const Matrix& g) {
    for (int h = 0; h < heads; ++h) {
      const Matrix& ph = p[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * dvh, dvh);
      if (v.needs_grad()) t->grad(v.id()).middleCols(h * dvh, dvh).noalias() += ph.transpose() * gh;
      if (!q.needs_grad() && !k.needs_grad()) continue;
      Matrix dp;
      dp.noalias() = gh * v.value().middleCols(h * dvh, dvh).transpose();
      Matrix ds = dp.cwiseProduct(ph);
      Eigen::VectorXd rs = ds.rowwise().sum();
      ds.array() -= ph.array().colwise() * rs.array();
      ds *= s;
      if (q.needs_grad()) t->grad(q.id()).middleCols(h * dh, dh).noalias() += ds * k.value().middleCols(h * dh, dh);
      if (k.needs_grad())
        t->grad(k.id()).middleCols(h * dh, dh).noalias() += ds.transpose() * q.value().middleCols(h * dh, dh);
    }
  });
}

/// Mean cross-entropy of row-wise logits against integer labels.
inline Var cross_entropy(Var logits, std::vector<int> labels) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw InvalidArgument("cross_entropy: label count mismatch");
  Matrix p = logits.value();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= p.cols()) throw InvalidArgument("cross_entropy: label out of range");
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    const double z = p.row(r).sum();
    p.row(r) /= z;
    loss += -(logits.value()(r, y) - mx - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  Tape* t = logits.tape();
  return t->make(std::move(out), logits.needs_grad(), [t, logits, labels = std::move(labels), p = std::move(p)](const Matrix& g) {
    Matrix d = p;
    for (std::size_t r = 0; r < labels.size(); ++r) d(static_cast<Eigen::Index>(r), labels[r]) -= 1.0;
    t->grad(logits.id()) += d * (g(0, 0) / static_cast<double>(labels.size()));
  });
}

/// Clamp to [lo, hi]; gradient passes only where the input is inside.
inline Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  Tape* t = a.tape();
  return t->make(std::move(out), a.needs_grad(), [t, a, lo, hi](const Matrix& g) {
    t->grad(a.id()).array() += g.array() * ((a.value().array() >= lo) && (a.value().array() <= hi)).cast<double>();
  });
}

}  // namespace strokegen::nn
