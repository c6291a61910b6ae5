#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "strokegen/diffusion/schedule.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/nn/tape.hpp"
#include "strokegen/random.hpp"

namespace strokegen::diffusion {

inline constexpr double kDivergenceLimit = 1e3;

struct Prediction {
  nn::Matrix eps;    // N x 2
  nn::Matrix pen;    // N x 1, in (0, 1)
};

/// Called as predict(y_t, t, sqrt(abar_t)).
using Predictor = std::function<Prediction(const nn::Matrix&, int, double)>;

enum class InitNoise { gaussian, uniform };

inline nn::Matrix initial_noise(Eigen::Index n, Eigen::Index d, Rng& rng, InitNoise kind = InitNoise::gaussian) {
  nn::Matrix y(n, d);
  const double r = std::sqrt(3.0);  // unit variance
  for (Eigen::Index i = 0; i < y.size(); ++i)
    y.data()[i] = kind == InitNoise::gaussian ? rng.normal() : rng.uniform(-r, r);
  return y;
}

/// One ancestral step from y_t; z is ignored when t == 1.
inline nn::Matrix reverse_step(const nn::Matrix& y, const nn::Matrix& eps_hat, int t, const DiffusionSchedule& s,
                               const nn::Matrix* z) {
  nn::Matrix mean = (y - (s.b(t) / std::sqrt(1.0 - s.ab(t))) * eps_hat) / std::sqrt(s.a(t));
  if (t > 1 && z && s.s(t) > 0.0) mean += s.s(t) * *z;
  return mean;
}

struct ChainResult {
  nn::Matrix y;    // y_0
  nn::Matrix pen;  // pen prediction from the t = 1 call
};

/// Runs t = T..1 from y_T. Raises DivergenceError when any coordinate
/// leaves [-1e3, 1e3] or becomes non-finite.
inline ChainResult reverse_chain(const DiffusionSchedule& s, nn::Matrix y, const Predictor& predict, Rng& rng) {
  ChainResult r;
  for (int t = s.T; t >= 1; --t) {
    Prediction p = predict(y, t, s.sqrt_alpha_bar(t));
    if (p.eps.rows() != y.rows() || p.eps.cols() != y.cols()) throw InvalidArgument("predictor returned wrong shape");
    nn::Matrix z;
    if (t > 1) z = initial_noise(y.rows(), y.cols(), rng);
    y = reverse_step(y, p.eps, t, s, &z);
    if (!y.allFinite() || y.cwiseAbs().maxCoeff() > kDivergenceLimit)
      throw DivergenceError("reverse chain diverged at t = " + std::to_string(t));
    if (t == 1) r.pen = std::move(p.pen);
  }
  r.y = std::move(y);
  return r;
}

}  // namespace strokegen::diffusion
