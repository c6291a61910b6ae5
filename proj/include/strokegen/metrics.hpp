#pragma once

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/raster.hpp"

namespace strokegen {

inline constexpr double kPsnrCap = 100.0;  // dB, returned for identical images

namespace detail {

inline void check_pair(const RasterImage& a, const RasterImage& b) {
  a.validate();
  b.validate();
  if (!a.same_shape(b))
    throw InvalidArgument("image shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                          std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                          std::to_string(b.width) + "x" + std::to_string(b.channels));
  for (const auto* img : {&a, &b})
    for (double p : img->pixels)
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("pixel values must lie in [0, 1]");
}

}  // namespace detail

/// 10 log10(1 / MSE) on unit-range pixels, capped at 100 dB.
inline double psnr(const RasterImage& a, const RasterImage& b) {
  detail::check_pair(a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimOptions {
  int window = 11;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM over every fully contained window x window position, averaged
/// over channels. Window statistics are unweighted; variances are
/// population variances.
inline double mssim(const RasterImage& a, const RasterImage& b, const SsimOptions& opt = {}) {
  detail::check_pair(a, b);
  const int w = opt.window;
  if (w < 1) throw InvalidArgument("SSIM window must be positive");
  if (a.height < w || a.width < w)
    throw InvalidArgument("image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                          " is smaller than the " + std::to_string(w) + "x" + std::to_string(w) + " SSIM window");
  const int H = a.height, W = a.width;
  // Summed-area tables of x, y, x^2, y^2, xy.
  Eigen::ArrayXXd sx(H + 1, W + 1), sy(H + 1, W + 1), sxx(H + 1, W + 1), syy(H + 1, W + 1), sxy(H + 1, W + 1);
  const double n = static_cast<double>(w) * w;
  double total = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    for (auto* t : {&sx, &sy, &sxx, &syy, &sxy}) t->setZero();
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double x = a.at(r, c, ch), y = b.at(r, c, ch);
        auto acc = [&](Eigen::ArrayXXd& t, double v) { t(r + 1, c + 1) = v + t(r, c + 1) + t(r + 1, c) - t(r, c); };
        acc(sx, x);
        acc(sy, y);
        acc(sxx, x * x);
        acc(syy, y * y);
        acc(sxy, x * y);
      }
    double sum = 0.0;
    for (int r = 0; r + w <= H; ++r)
      for (int c = 0; c + w <= W; ++c) {
        auto box = [&](const Eigen::ArrayXXd& t) { return t(r + w, c + w) - t(r, c + w) - t(r + w, c) + t(r, c); };
        const double mx = box(sx) / n, my = box(sy) / n;
        const double vx = std::max(box(sxx) / n - mx * mx, 0.0);
        const double vy = std::max(box(syy) / n - my * my, 0.0);
        const double bound = std::sqrt(vx * vy);
        const double cxy = std::clamp(box(sxy) / n - mx * my, -bound, bound);
        sum += (2 * mx * my + opt.c1) * (2 * cxy + opt.c2) / ((mx * mx + my * my + opt.c1) * (vx + vy + opt.c2));
      }
    total += sum / (static_cast<double>(H - w + 1) * (W - w + 1));
  }
  return std::clamp(total / a.channels, -1.0, 1.0);
}

/// Plug-in network for IS and FID. `class_probabilities` must return a
/// distribution; `embed` any fixed-width feature vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Eigen::VectorXd embed(const RasterImage& img) const = 0;
  virtual Eigen::VectorXd class_probabilities(const RasterImage& img) const = 0;
};

/// exp(E_x KL(p(y|x) || p(y))).
inline double inception_score(const std::vector<Eigen::VectorXd>& probs) {
  if (probs.empty()) throw InvalidArgument("inception score needs at least one image");
  const auto k = probs.front().size();
  Eigen::VectorXd marginal = Eigen::VectorXd::Zero(k);
  for (const auto& p : probs) {
    if (p.size() != k) throw InvalidArgument("class distributions differ in length");
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-6)
      throw InvalidArgument("class probabilities must be a distribution");
    marginal += p;
  }
  marginal /= static_cast<double>(probs.size());
  double kl = 0.0;
  for (const auto& p : probs)
    for (Eigen::Index i = 0; i < k; ++i)
      if (p(i) > 0.0) kl += p(i) * std::log(p(i) / marginal(i));
  return std::exp(kl / static_cast<double>(probs.size()));
}

namespace detail {

inline void mean_cov(const std::vector<Eigen::VectorXd>& xs, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const auto d = xs.front().size();
  mu = Eigen::VectorXd::Zero(d);
  for (const auto& x : xs) {
    if (x.size() != d) throw InvalidArgument("feature vectors differ in length");
    mu += x;
  }
  mu /= static_cast<double>(xs.size());
  cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& x : xs) cov += (x - mu) * (x - mu).transpose();
  cov /= static_cast<double>(std::max<std::size_t>(xs.size() - 1, 1));
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
inline double frechet_distance(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("Frechet distance needs at least two samples per set");
  if (a.front().size() != b.front().size()) throw InvalidArgument("feature widths differ");
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd s1, s2;
  detail::mean_cov(a, m1, s1);
  detail::mean_cov(b, m2, s2);
  const Eigen::MatrixXd r1 = detail::psd_sqrt(s1);
  const Eigen::MatrixXd cross = detail::psd_sqrt(r1 * s2 * r1);
  return std::max(0.0, (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace());
}

struct MetricReport {
  double psnr = 0.0;
  double mssim = 0.0;
  std::optional<double> is_score;
  std::optional<double> fid;
  int n_pairs = 0;
  std::optional<double> layout_adherence;  // fraction in [0, 1]

  nlohmann::json to_json() const {
    nlohmann::json j{{"psnr", psnr}, {"mssim", mssim}, {"n_pairs", n_pairs}};
    j["is_score"] = is_score ? nlohmann::json(*is_score) : nlohmann::json(nullptr);
    j["fid"] = fid ? nlohmann::json(*fid) : nlohmann::json(nullptr);
    j["layout_adherence"] = layout_adherence ? nlohmann::json(*layout_adherence) : nlohmann::json(nullptr);
    return j;
  }

  static MetricReport from_json(const nlohmann::json& j) {
    static const std::vector<std::string> keys{"psnr", "mssim", "n_pairs", "is_score", "fid", "layout_adherence"};
    if (!j.is_object()) throw InvalidArgument("metric report must be a JSON object");
    for (const auto& [k, v] : j.items())
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw InvalidArgument("unknown report key \"" + k + "\"");
    auto opt = [&](const char* k) -> std::optional<double> {
      if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
      return j.at(k).get<double>();
    };
    MetricReport r;
    try {
      r.psnr = j.at("psnr").get<double>();
      r.mssim = j.at("mssim").get<double>();
      r.n_pairs = j.at("n_pairs").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("metric report: ") + e.what());
    }
    r.is_score = opt("is_score");
    r.fid = opt("fid");
    r.layout_adherence = opt("layout_adherence");
    return r;
  }

  /// One "key=value" line per present field.
  std::string to_key_value() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "psnr=" << psnr << "\nmssim=" << mssim << "\nn_pairs=" << n_pairs << '\n';
    if (is_score) os << "is_score=" << *is_score << '\n';
    if (fid) os << "fid=" << *fid << '\n';
    if (layout_adherence) os << "layout_adherence=" << *layout_adherence << '\n';
    return os.str();
  }
};

/// Mean PSNR and MSSIM over aligned pairs; IS (on `gen`) and FID (gen vs
/// ref) only when an extractor is given.
inline MetricReport batch_report(const std::vector<RasterImage>& gen, const std::vector<RasterImage>& ref,
                                 const FeatureExtractor* extractor = nullptr, const SsimOptions& ssim = {}) {
  if (gen.empty()) throw InvalidArgument("batch_report needs at least one pair");
  if (gen.size() != ref.size())
    throw InvalidArgument("generated and reference lists differ in length: " + std::to_string(gen.size()) + " vs " +
                          std::to_string(ref.size()));
  MetricReport r;
  r.n_pairs = static_cast<int>(gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i) {
    r.psnr += psnr(gen[i], ref[i]);
    r.mssim += mssim(gen[i], ref[i], ssim);
  }
  r.psnr /= static_cast<double>(gen.size());
  r.mssim /= static_cast<double>(gen.size());
  if (extractor) {
    std::vector<Eigen::VectorXd> probs, fg, fr;
    for (std::size_t i = 0; i < gen.size(); ++i) {
      probs.push_back(extractor->class_probabilities(gen[i]));
      fg.push_back(extractor->embed(gen[i]));
      fr.push_back(extractor->embed(ref[i]));
    }
    r.is_score = inception_score(probs);
    if (gen.size() >= 2) r.fid = frechet_distance(fg, fr);
  }
  return r;
}

}  // namespace strokegen
