#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "strokegen/diffusion/denoiser.hpp"
#include "strokegen/diffusion/losses.hpp"
#include "strokegen/diffusion/sampler.hpp"
#include "strokegen/diffusion/schedule.hpp"
#include "strokegen/layout.hpp"
#include "strokegen/style_encoder.hpp"
#include "strokegen/style_training.hpp"
#include "strokegen/text_layout.hpp"

namespace strokegen::diffusion {

struct ModelConfig {
  MultiScaleConfig style = MultiScaleConfig::toy();
  TextLayoutConfig text;
  DenoiserConfig denoiser;
  int steps = 50;
  std::string schedule = "toy";
  Variance variance = Variance::beta;
  double pen_weight = 1.0;
  InitNoise init = InitNoise::gaussian;
  bool ablate_layout = false;

  void validate() const {
    style.validate();
    text.validate();
    denoiser.validate();
    if (text.style_dim != style.dim) throw InvalidArgument("text style_dim must equal the style encoder dim");
    if (denoiser.cond_dim != text.dim) throw InvalidArgument("denoiser cond_dim must equal the text-layout dim");
    if (denoiser.dim != text.dim) throw InvalidArgument("stroke tokens feed fuse, so denoiser dim must equal text dim");
    if (steps < 2) throw InvalidArgument("diffusion needs at least 2 steps");
    if (!(pen_weight >= 0)) throw InvalidArgument("pen_weight must be non-negative");
  }
};

/// Offset normalization learned from the training set.
struct DataStats {
  std::array<double, 2> scale{1.0, 1.0};  // per-axis std of offsets
  double points_per_glyph = 8.0;          // mean points per non-space character

  static DataStats from_samples(const std::vector<Sample>& samples) {
    if (samples.empty()) throw InvalidArgument("cannot compute statistics of an empty dataset");
    double sx = 0, sy = 0, n = 0, glyphs = 0;
    for (const auto& s : samples) {
      for (const auto& p : s.strokes) {
        sx += p.dx * p.dx;
        sy += p.dy * p.dy;
        n += 1;
      }
      for (char c : s.text) glyphs += c != ' ';
    }
    DataStats d;
    d.scale = {std::max(std::sqrt(sx / n), 1e-6), std::max(std::sqrt(sy / n), 1e-6)};
    d.points_per_glyph = n / std::max(glyphs, 1.0);
    return d;
  }

  std::size_t predicted_length(std::string_view text) const {
    std::size_t g = 0;
    for (char c : text) g += c != ' ';
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(g) * points_per_glyph)));
  }
};

/// Conditioning that does not depend on the noisy strokes.
struct Context {
  nn::Matrix gamma;   // characters: E + text-style attention
  nn::Matrix layout;  // one token per word
  std::vector<double> glyph_words;
};

/// Padded batch entry; rows with mask 0 are ignored.
struct BatchItem {
  std::string text;
  WordLayout layout;
  nn::Matrix y0;  // padded length x 2, already divided by the data scale
  std::vector<std::uint8_t> pen;
  std::vector<std::uint8_t> mask;
  const MultiScaleStyleFeatures* style = nullptr;  // full style features
};

struct LossReport {
  double stroke = 0.0;
  double drawn = 0.0;
  double total = 0.0;
};

/// Text, layout and style-conditioned stroke diffusion. The style encoder
/// is held separately and frozen.
class StrokeDiffusionModel {
 public:
  StrokeDiffusionModel(ModelConfig cfg, Vocab vocab, std::uint64_t seed)
      : cfg_(std::move(cfg)), rng_init_(seed) {
    cfg_.validate();
    text_ = std::make_unique<TextLayoutEncoder>(store_, cfg_.text, std::move(vocab), rng_init_);
    denoiser_ = std::make_unique<Denoiser>(store_, cfg_.denoiser, rng_init_);
    schedule_ = make_schedule(cfg_.steps, cfg_.schedule, cfg_.variance);
    if (cfg_.ablate_layout) text_->ablate_layout();
  }

  StrokeDiffusionModel(const StrokeDiffusionModel&) = delete;
  StrokeDiffusionModel& operator=(const StrokeDiffusionModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const TextLayoutEncoder& text() const { return *text_; }
  TextLayoutEncoder& text() { return *text_; }
  const Denoiser& denoiser() const { return *denoiser_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  void set_schedule(DiffusionSchedule s) { schedule_ = std::move(s); }
  const DataStats& stats() const { return stats_; }
  void set_stats(const DataStats& s) { stats_ = s; }

  nn::Var context_gamma(nn::Tape& t, std::string_view text, const MultiScaleStyleFeatures& local) const {
    return text_->style_context(t, text, t.constant(local.features));
  }

  Context context(std::string_view text, const WordLayout& layout, const MultiScaleStyleFeatures& local) const {
    nn::Tape t(false);
    return {context_gamma(t, text, local).value(), text_->encode_layout(t, layout).value(), glyph_words(text)};
  }

  /// Full forward pass for one sequence of noisy offsets.
  DenoiserOutput predict(nn::Tape& t, const nn::Matrix& y_t, double sqrt_alpha_bar, nn::Var gamma,
                         nn::Var layout_tokens, const std::vector<double>& words, FuseTrace* trace = nullptr) const {
    nn::Var tokens = denoiser_->tokens(t, y_t, stats_.scale, stats_.points_per_glyph, words);
    nn::Var cond = text_->fuse(t, gamma, tokens, layout_tokens, trace);
    return (*denoiser_)(t, tokens, cond, sqrt_alpha_bar);
  }

  Prediction predict(const nn::Matrix& y_t, double sqrt_alpha_bar, const Context& ctx) const {
    nn::Tape t(false);
    auto out = predict(t, y_t, sqrt_alpha_bar, t.constant(ctx.gamma), t.constant(ctx.layout), ctx.glyph_words);
    return {out.eps.value(), out.pen.value()};
  }

  /// Builds the per-sample graph of L_stroke and L_drawn on `t`. The noise
  /// draw covers valid rows only, so padding never changes the result.
  std::pair<nn::Var, nn::Var> sample_losses(nn::Tape& t, const BatchItem& item, Rng& rng, bool random_crop,
                                            int* timestep = nullptr) const {
    std::vector<int> rows;
    for (std::size_t i = 0; i < item.mask.size(); ++i)
      if (item.mask[i]) rows.push_back(static_cast<int>(i));
    if (rows.empty()) throw InvalidArgument("batch item has no valid points");
    if (item.y0.rows() != static_cast<Eigen::Index>(item.mask.size()) || item.pen.size() != item.mask.size())
      throw InvalidArgument("batch item arrays disagree in length");
    const auto n = static_cast<Eigen::Index>(rows.size());
    nn::Matrix y0(n, 2);
    std::vector<std::uint8_t> d0;
    for (Eigen::Index r = 0; r < n; ++r) {
      y0.row(r) = item.y0.row(rows[static_cast<std::size_t>(r)]);
      d0.push_back(item.pen[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])]);
    }
    if (!item.style) throw InvalidArgument("batch item has no style features");
    const auto local = local_style_patches(*item.style, cfg_.style, cfg_.style.local_crop,
                                           random_crop ? Mode::train : Mode::eval, &rng);
    const int step = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule_.T)));
    if (timestep) *timestep = step;
    nn::Matrix eps(n, 2);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const nn::Matrix y_t = forward_noise(y0, step, eps, schedule_);
    nn::Var gamma = context_gamma(t, item.text, local);
    nn::Var lay = text_->encode_layout(t, item.layout);
    auto out = predict(t, y_t, schedule_.sqrt_alpha_bar(step), gamma, lay, glyph_words(item.text));
    return {loss_stroke(t.constant(eps), out.eps), loss_drawn(d0, out.pen)};
  }

  /// Batch losses averaged over valid entries; gradients accumulate into
  /// the parameters when `backward` is set.
  LossReport batch_losses(const std::vector<BatchItem>& batch, Rng& rng, bool backward, bool random_crop = true) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    nn::Tape t(backward);
    double total_points = 0;
    std::vector<double> counts;
    for (const auto& b : batch) {
      double c = 0;
      for (auto m : b.mask) c += m;
      counts.push_back(c);
      total_points += c;
    }
    std::vector<nn::Var> strokes, drawn;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto [ls, ld] = sample_losses(t, batch[i], rng, random_crop);
      strokes.push_back(nn::scale(ls, counts[i] / total_points));
      drawn.push_back(nn::scale(ld, counts[i] / total_points));
    }
    nn::Var ls = nn::sum(nn::concat_rows(strokes));
    nn::Var ld = nn::sum(nn::concat_rows(drawn));
    nn::Var total = ls + nn::scale(ld, cfg_.pen_weight);
    LossReport r{ls.item(), ld.item(), total.item()};
    if (!std::isfinite(r.total)) throw NumericalError("training loss is not finite");
    if (backward) t.backward(total);
    return r;
  }

  /// Generates strokes for `text` inside `layout` in the style of the
  /// image. Deterministic given `seed`.
  StrokeSequence sample(const std::string& text, const WordLayout& layout, const MultiScaleStyleFeatures& style,
                        std::uint64_t seed, std::size_t length = 0) const {
    validate_text(text);
    validate_layout(layout);
    if (split_words(text).size() != layout.size())
      throw LayoutError("text has " + std::to_string(split_words(text).size()) + " words but the layout has " +
                        std::to_string(layout.size()) + " boxes");
    const std::size_t n = length ? length : stats_.predicted_length(text);
    const auto local = local_style_patches(style, cfg_.style, cfg_.style.local_crop, Mode::eval);
    const Context ctx = context(text, layout, local);
    Rng rng(seed);
    nn::Matrix y = initial_noise(static_cast<Eigen::Index>(n), 2, rng, cfg_.init);
    const auto chain = reverse_chain(
        schedule_, std::move(y),
        [&](const nn::Matrix& yt, int, double sab) { return predict(yt, sab, ctx); }, rng);
    std::vector<StrokePoint> pts;
    for (Eigen::Index i = 0; i < chain.y.rows(); ++i)
      pts.push_back({chain.y(i, 0) * stats_.scale[0], chain.y(i, 1) * stats_.scale[1],
                     static_cast<std::uint8_t>(chain.pen(i, 0) > 0.5 ? kPenUp : kPenDown)});
    return StrokeSequence(std::move(pts));
  }

 private:
  ModelConfig cfg_;
  Rng rng_init_;
  nn::ParamStore store_;
  std::unique_ptr<TextLayoutEncoder> text_;
  std::unique_ptr<Denoiser> denoiser_;
  DiffusionSchedule schedule_;
  DataStats stats_;
};

/// Pads samples into batch items using precomputed style features.
inline BatchItem make_batch_item(const Sample& s, const DataStats& stats, const MultiScaleStyleFeatures* style,
                                 std::size_t padded_length = 0) {
  const std::size_t n = s.strokes.size();
  const std::size_t len = std::max(n, padded_length);
  BatchItem b;
  b.text = s.text;
  b.layout = s.layout;
  b.y0 = nn::Matrix::Zero(static_cast<Eigen::Index>(len), 2);
  b.pen.assign(len, kPenUp);
  b.mask.assign(len, 0);
  for (std::size_t i = 0; i < n; ++i) {
    b.y0(static_cast<Eigen::Index>(i), 0) = s.strokes[i].dx / stats.scale[0];
    b.y0(static_cast<Eigen::Index>(i), 1) = s.strokes[i].dy / stats.scale[1];
    b.pen[i] = s.strokes[i].pen;
    b.mask[i] = 1;
  }
  b.style = style;
  return b;
}

struct TrainOptions {
  int iterations = 2000;
  int batch = 8;
  double lr = 1e-3;
  int warmup = 100;
  double ema_decay = 0.995;  // 0 disables
  std::uint64_t seed = 1;
};

struct TrainRecord {
  long step = 0;
  LossReport loss;
  double lr = 0.0;
};

/// Adam training loop over a fixed dataset. Style features are computed
/// once with the frozen encoder; each sample is conditioned on a different
/// sample by the same writer.
class DiffusionTrainer {
 public:
  DiffusionTrainer(StrokeDiffusionModel& model, const StyleEncoder& style, const std::vector<Sample>& data,
                   TrainOptions opt)
      : model_(model), data_(data), opt_(opt), adam_({.lr = opt.lr}), rng_(opt.seed) {
    if (data_.empty()) throw InvalidArgument("training set is empty");
    if (opt_.batch < 1 || opt_.iterations < 0) throw InvalidArgument("invalid training options");
    model_.set_stats(DataStats::from_samples(data_));
    for (const auto& s : data_) {
      if (s.writer_id >= static_cast<int>(by_writer_.size())) by_writer_.resize(static_cast<std::size_t>(s.writer_id) + 1);
      by_writer_[static_cast<std::size_t>(s.writer_id)].push_back(features_.size());
      features_.push_back(style.encode(render_style_image(s.strokes, style.config())));
    }
    if (opt_.ema_decay > 0)
      for (const auto& p : model_.params()) ema_[p.name] = p.value;
  }

  long step() const { return step_; }
  void set_step(long s) { step_ = s; }
  nn::Adam& optimizer() { return adam_; }
  Rng& rng() { return rng_; }
  std::unordered_map<std::string, nn::Matrix>& ema() { return ema_; }
  const std::vector<MultiScaleStyleFeatures>& style_features() const { return features_; }

  /// Index of a style reference for sample i: another sample of the same
  /// writer when one exists.
  std::size_t style_partner(std::size_t i) {
    const auto& group = by_writer_[static_cast<std::size_t>(data_[i].writer_id)];
    if (group.size() < 2) return i;
    std::size_t j = group[rng_.below(group.size() - 1)];
    return j == i ? group.back() : j;
  }

  TrainRecord train_step() {
    std::vector<BatchItem> batch;
    for (int b = 0; b < opt_.batch; ++b) {
      const std::size_t i = rng_.below(data_.size());
      batch.push_back(make_batch_item(data_[i], model_.stats(), &features_[style_partner(i)]));
    }
    const double lr = opt_.warmup > 0 ? opt_.lr * std::min(1.0, static_cast<double>(step_ + 1) / opt_.warmup) : opt_.lr;
    adam_.options().lr = lr;
    model_.params().zero_grad();
    const LossReport loss = model_.batch_losses(batch, rng_, true);
    adam_.step(model_.params());
    ++step_;
    if (opt_.ema_decay > 0)
      for (const auto& p : model_.params()) {
        auto& e = ema_[p.name];
        e = opt_.ema_decay * e + (1.0 - opt_.ema_decay) * p.value;
      }
    return {step_, loss, lr};
  }

  /// Copies the EMA weights into the model.
  void apply_ema() {
    for (auto& p : model_.params()) {
      auto it = ema_.find(p.name);
      if (it != ema_.end()) p.value = it->second;
    }
  }

 private:
  StrokeDiffusionModel& model_;
  const std::vector<Sample>& data_;
  TrainOptions opt_;
  nn::Adam adam_;
  Rng rng_;
  long step_ = 0;
  std::vector<MultiScaleStyleFeatures> features_;
  std::vector<std::vector<std::size_t>> by_writer_;
  std::unordered_map<std::string, nn::Matrix> ema_;
};

}  // namespace strokegen::diffusion
