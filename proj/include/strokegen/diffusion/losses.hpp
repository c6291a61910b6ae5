#pragma once

#include <cmath>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/nn/ops.hpp"

namespace strokegen::diffusion {

inline constexpr double kPenClamp = 1e-7;

/// Mean squared error over every entry.
inline nn::Var loss_stroke(nn::Var eps, nn::Var eps_hat) {
  if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols())
    throw InvalidArgument("loss_stroke: shape mismatch");
  return nn::mean(nn::square(eps_hat - eps));
}

inline double loss_stroke(const nn::Matrix& eps, const nn::Matrix& eps_hat) {
  nn::Tape t(false);
  return loss_stroke(t.constant(eps), t.constant(eps_hat)).item();
}

/// Mean binary cross-entropy of pen bits against predictions in (0, 1).
inline nn::Var loss_drawn(const std::vector<std::uint8_t>& d0, nn::Var d_hat) {
  const auto n = static_cast<Eigen::Index>(d0.size());
  if (d_hat.rows() * d_hat.cols() != n || n == 0) throw InvalidArgument("loss_drawn: shape mismatch");
  const nn::Matrix& p = d_hat.value();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = p.data()[i];
    if (!(v >= kPenClamp && v <= 1.0 - kPenClamp)) throw NumericalError("pen prediction outside (0, 1)");
  }
  nn::Matrix out(1, 1);
  out(0, 0) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = p.data()[i];
    out(0, 0) -= d0[static_cast<std::size_t>(i)] ? std::log(v) : std::log(1.0 - v);
  }
  out(0, 0) /= static_cast<double>(n);
  nn::Tape* t = d_hat.tape();
  return t->make(std::move(out), d_hat.needs_grad(), [t, d_hat, d0](const nn::Matrix& g) {
    nn::Matrix& gd = t->grad(d_hat.id());
    const double k = g(0, 0) / static_cast<double>(d0.size());
    for (std::size_t i = 0; i < d0.size(); ++i) {
      const double v = d_hat.value().data()[i];
      gd.data()[i] += k * (d0[i] ? -1.0 / v : 1.0 / (1.0 - v));
    }
  });
}

inline double loss_drawn(const std::vector<std::uint8_t>& d0, const std::vector<double>& d_hat) {
  nn::Tape t(false);
  nn::Matrix m(static_cast<Eigen::Index>(d_hat.size()), 1);
  for (std::size_t i = 0; i < d_hat.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = d_hat[i];
  return loss_drawn(d0, t.constant(std::move(m))).item();
}

}  // namespace strokegen::diffusion
