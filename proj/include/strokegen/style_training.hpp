#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <vector>

#include "strokegen/nn/layers.hpp"
#include "strokegen/random.hpp"
#include "strokegen/sample.hpp"
#include "strokegen/style_encoder.hpp"

namespace strokegen {

inline RasterImage render_style_image(const StrokeSequence& strokes, const MultiScaleConfig& cfg) {
  return render(strokes, cfg.full.height, cfg.full.width, cfg.line_width, cfg.channels);
}

struct PretrainOptions {
  int epochs = 4;
  int batch = 8;
  double lr = 1e-3;
  double val_fraction = 0.2;
  int eval_every = 0;  // iterations; 0 evaluates once per epoch
  double max_seconds = 0.0;  // wall-clock cap, 0 disables
  std::uint64_t seed = 1;
};

struct PretrainRecord {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct WriterIdData {
  std::vector<RasterImage> images;
  std::vector<int> labels;
};

/// Every sample rendered as a style image, labelled by writer.
inline WriterIdData writer_id_data(const std::vector<Sample>& samples, const MultiScaleConfig& cfg) {
  WriterIdData d;
  for (const auto& s : samples) {
    d.images.push_back(render_style_image(s.strokes, cfg));
    d.labels.push_back(s.writer_id);
  }
  return d;
}

/// Stratified split: the last `fraction` of each writer's samples (in file
/// order) is held out.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_writer(const std::vector<int>& labels,
                                                                                     double fraction) {
  std::vector<std::vector<std::size_t>> per;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto w = static_cast<std::size_t>(labels[i]);
    if (per.size() <= w) per.resize(w + 1);
    per[w].push_back(i);
  }
  std::vector<std::size_t> train, val;
  for (const auto& idx : per) {
    const auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) (k + n_val < idx.size() ? train : val).push_back(idx[k]);
  }
  return {train, val};
}

inline double writer_accuracy(const StyleEncoder& enc, const WriterIdData& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    const auto p = classify_writer(enc.encode(data.images[i]), enc);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

/// Writer-identification training of the whole encoder with Adam. `log`
/// receives one record per evaluation. A trainer restored at step k resumes
/// from epoch k / batches-per-epoch + 1.
class WriterIdTrainer {
 public:
  WriterIdTrainer(StyleEncoder& enc, PretrainOptions opt)
      : enc_(enc), opt_(opt), adam_({.lr = opt.lr}), rng_(opt.seed) {}

  nn::Adam& optimizer() { return adam_; }
  Rng& rng() { return rng_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  /// One Adam update on the given images; returns the mean cross-entropy.
  double train_step(const WriterIdData& data, const std::vector<std::size_t>& batch) {
    enc_.params().zero_grad();
    nn::Tape t;
    std::vector<nn::Var> logits;
    std::vector<int> labels;
    for (std::size_t i : batch) {
      logits.push_back(enc_.writer_logits(t, enc_.features(t, data.images[i])));
      labels.push_back(data.labels[i]);
    }
    nn::Var loss = nn::cross_entropy(nn::concat_rows(logits), labels);
    if (!std::isfinite(loss.item())) throw NumericalError("writer-ID loss is not finite");
    t.backward(loss);
    adam_.step(enc_.params());
    ++step_;
    return loss.item();
  }

  std::vector<PretrainRecord> fit(const WriterIdData& data, const std::function<void(const PretrainRecord&)>& log = {}) {
    const auto [train, val] = split_by_writer(data.labels, opt_.val_fraction);
    if (train.empty()) throw InvalidArgument("no training images");
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    std::vector<PretrainRecord> history;
    const auto per_epoch = static_cast<long>((train.size() + static_cast<std::size_t>(opt_.batch) - 1) /
                                             static_cast<std::size_t>(opt_.batch));
    if (step_ % per_epoch != 0) throw InvalidArgument("pretraining can only resume at an epoch boundary");
    double running = 0.0;
    int running_n = 0;
    bool out_of_time = false;
    for (int epoch = static_cast<int>(step_ / per_epoch) + 1; epoch <= opt_.epochs && !out_of_time; ++epoch) {
      std::vector<std::size_t> order = train;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
      for (long b = 0; b < per_epoch; ++b) {
        const auto lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(opt_.batch);
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                             order.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(order.size(), lo + static_cast<std::size_t>(opt_.batch))));
        running += train_step(data, batch);
        ++running_n;
        const bool timed_out = opt_.max_seconds > 0 && elapsed() > opt_.max_seconds;
        const bool eval_now = (opt_.eval_every > 0 && step_ % opt_.eval_every == 0) || b + 1 == per_epoch || timed_out;
        if (eval_now) {
          PretrainRecord r{epoch, step_, running / std::max(running_n, 1), writer_accuracy(enc_, data, val), elapsed()};
          running = 0.0;
          running_n = 0;
          history.push_back(r);
          if (log) log(r);
        }
        if (timed_out) {
          out_of_time = true;
          break;
        }
      }
    }
    return history;
  }

 private:
  StyleEncoder& enc_;
  PretrainOptions opt_;
  nn::Adam adam_;
  Rng rng_;
  long step_ = 0;
};

}  // namespace strokegen
