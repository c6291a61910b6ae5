#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "strokegen/errors.hpp"
#include "strokegen/nn/tape.hpp"

namespace strokegen::diffusion {

enum class Variance {
  beta,       // sigma_t^2 = beta_t
  posterior,  // sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
  zero,       // sigma_t = 0: each step moves to the predicted posterior mean
};

inline Variance parse_variance(const std::string& s) {
  if (s == "beta") return Variance::beta;
  if (s == "posterior") return Variance::posterior;
  if (s == "zero") return Variance::zero;
  throw InvalidArgument("unknown variance rule \"" + s + "\" (expected beta, posterior or zero)");
}

inline std::string to_string(Variance v) {
  switch (v) {
    case Variance::beta: return "beta";
    case Variance::posterior: return "posterior";
    case Variance::zero: return "zero";
  }
  return "beta";
}

/// Tables indexed by t - 1 for t = 1..T.
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar, sigma;

  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar.at(static_cast<std::size_t>(t - 1))); }
  double b(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double a(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double ab(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  double ab_prev(int t) const { return t == 1 ? 1.0 : ab(t - 1); }
  double s(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }

  void validate() const {
    if (T < 2) throw InvalidArgument("schedule needs T >= 2");
    const auto n = static_cast<std::size_t>(T);
    if (beta.size() != n || alpha.size() != n || alpha_bar.size() != n || sigma.size() != n)
      throw InvalidArgument("schedule tables must have length T");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw InvalidArgument("beta_t must lie in (0, 1)");
      if (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1])) throw InvalidArgument("alpha_bar must strictly decrease");
      if (!(sigma[i] >= 0.0)) throw InvalidArgument("sigma_t must be non-negative");
    }
  }
};

inline DiffusionSchedule schedule_from_betas(std::vector<double> betas, Variance var = Variance::beta) {
  DiffusionSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  double prod = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    const double b = s.beta[static_cast<std::size_t>(t - 1)];
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  for (int t = 1; t <= s.T; ++t) {
    const double b = s.b(t);
    double var_t = b;
    if (var == Variance::posterior) var_t = b * (1.0 - s.ab_prev(t)) / (1.0 - s.ab(t));
    if (var == Variance::zero) var_t = 0.0;
    s.sigma.push_back(std::sqrt(var_t));
  }
  s.validate();
  return s;
}

/// Linear betas from `beta_min` to `beta_max`.
inline DiffusionSchedule linear_schedule(int T, double beta_min, double beta_max, Variance var = Variance::beta) {
  if (T < 2) throw InvalidArgument("schedule needs T >= 2, got " + std::to_string(T));
  std::vector<double> b;
  for (int t = 0; t < T; ++t) b.push_back(beta_min + (beta_max - beta_min) * t / (T - 1));
  return schedule_from_betas(std::move(b), var);
}

/// "full": linear 1e-4 -> 0.02. "toy": the same range stretched by 1000/T so
/// that short chains still end near pure noise.
inline DiffusionSchedule make_schedule(int T, const std::string& profile = "full", Variance var = Variance::beta) {
  if (T < 2) throw InvalidArgument("schedule needs T >= 2, got " + std::to_string(T));
  if (profile == "full") return linear_schedule(T, 1e-4, 0.02, var);
  if (profile == "toy") {
    const double k = std::max(1.0, 1000.0 / T);
    return linear_schedule(T, 1e-4 * k, std::min(0.02 * k, 0.999), var);
  }
  throw InvalidArgument("unknown schedule profile \"" + profile + "\"");
}

/// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.
inline nn::Matrix forward_noise(const nn::Matrix& y0, int t, const nn::Matrix& eps, const DiffusionSchedule& s) {
  if (t < 1 || t > s.T) throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, T]");
  if (y0.rows() != eps.rows() || y0.cols() != eps.cols()) throw InvalidArgument("forward_noise: shape mismatch");
  return std::sqrt(s.ab(t)) * y0 + std::sqrt(1.0 - s.ab(t)) * eps;
}

}  // namespace strokegen::diffusion
