#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "strokegen/checkpoint.hpp"
#include "strokegen/config.hpp"
#include "strokegen/diffusion/model.hpp"
#include "strokegen/layout.hpp"
#include "strokegen/metrics.hpp"
#include "strokegen/raster.hpp"
#include "strokegen/sample.hpp"
#include "strokegen/style_training.hpp"

namespace strokegen {

/// One JSON object per line. A null stream discards records.
class JsonLog {
 public:
  JsonLog() = default;
  explicit JsonLog(std::ostream* os) : os_(os) {}
  void write(const nlohmann::ordered_json& record) {
    if (!os_) return;
    *os_ << record.dump() << '\n';
    os_->flush();
  }

 private:
  std::ostream* os_ = nullptr;
};

inline int writer_count(const std::vector<Sample>& samples) {
  int n = 0;
  for (const auto& s : samples) n = std::max(n, s.writer_id + 1);
  return n;
}

inline nlohmann::ordered_json to_json(const PretrainRecord& r) {
  return {{"event", "pretrain_eval"}, {"epoch", r.epoch},        {"step", r.step},
          {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy}, {"seconds", r.seconds}};
}

inline nlohmann::ordered_json to_json(const diffusion::TrainRecord& r) {
  return {{"event", "train"},
          {"step", r.step},
          {"loss_stroke", r.loss.stroke},
          {"loss_drawn", r.loss.drawn},
          {"loss", r.loss.total},
          {"lr", r.lr}};
}

/// Mean of `values` over the `window` entries ending at 1-based `step`.
inline double smoothed(const std::vector<double>& values, std::size_t step, std::size_t window = 50) {
  if (step == 0 || step > values.size()) throw InvalidArgument("smoothing step outside the recorded history");
  const std::size_t lo = step > window ? step - window : 0;
  double s = 0.0;
  for (std::size_t i = lo; i < step; ++i) s += values[i];
  return s / static_cast<double>(step - lo);
}

/// Index of a style reference for each sample: the next sample of the same
/// writer in file order, wrapping around.
inline std::vector<std::size_t> same_writer_partners(const std::vector<Sample>& samples) {
  std::vector<std::vector<std::size_t>> by_writer(static_cast<std::size_t>(writer_count(samples)));
  for (std::size_t i = 0; i < samples.size(); ++i) by_writer[static_cast<std::size_t>(samples[i].writer_id)].push_back(i);
  std::vector<std::size_t> out(samples.size());
  for (const auto& group : by_writer)
    for (std::size_t k = 0; k < group.size(); ++k) out[group[k]] = group[(k + 1) % group.size()];
  return out;
}

/// Generates one line per target, styled after `style_refs[i]`, with seed
/// `seed + i`.
inline std::vector<Sample> generate_lines(const diffusion::StrokeDiffusionModel& model, const StyleEncoder& style,
                                          const std::vector<Sample>& targets, const std::vector<Sample>& style_refs,
                                          std::uint64_t seed) {
  if (targets.size() != style_refs.size()) throw InvalidArgument("need one style reference per target");
  std::vector<Sample> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto feats = style.encode(render_style_image(style_refs[i].strokes, style.config()));
    Sample s;
    s.text = targets[i].text;
    s.writer_id = style_refs[i].writer_id;
    s.layout = targets[i].layout;
    s.strokes = model.sample(s.text, s.layout, feats, seed + i);
    out.push_back(std::move(s));
  }
  return out;
}

/// Pen-down points inside their dilated layout boxes, pooled over samples.
inline double pooled_adherence(const std::vector<Sample>& samples, double dilation = 0.15) {
  double inside = 0.0, total = 0.0;
  for (const auto& s : samples) {
    const auto pts = offsets_to_absolute(s.strokes);
    double ink = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) ink += is_ink(std::span<const AbsolutePoint>(pts), i);
    inside += layout_adherence(s.strokes, s.layout, dilation) * ink;
    total += ink;
  }
  return total > 0 ? inside / total : 0.0;
}

struct EvalOptions {
  int height = 64;
  int width = 512;
  double dilation = 0.15;
};

/// Renders generated and reference lines pairwise and scores them. Texts
/// must match pair by pair.
inline MetricReport evaluate(const std::vector<Sample>& generated, const std::vector<Sample>& reference,
                             const EvalOptions& opt = {}, const FeatureExtractor* extractor = nullptr) {
  if (generated.size() != reference.size())
    throw InvalidArgument("generated and reference sets differ in size: " + std::to_string(generated.size()) +
                          " vs " + std::to_string(reference.size()));
  std::vector<RasterImage> g, r;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (generated[i].text != reference[i].text)
      throw InvalidArgument("pair " + std::to_string(i) + " texts differ: \"" + generated[i].text + "\" vs \"" +
                            reference[i].text + "\"");
    const double lw = default_line_width(opt.height);
    g.push_back(render(generated[i].strokes, opt.height, opt.width, lw));
    r.push_back(render(reference[i].strokes, opt.height, opt.width, lw));
  }
  MetricReport rep = batch_report(g, r, extractor);
  rep.layout_adherence = pooled_adherence(generated, opt.dilation);
  return rep;
}

struct PretrainResult {
  StyleEncoder encoder;
  std::vector<PretrainRecord> history;
  double seconds = 0.0;
};

inline PretrainResult pretrain_style(const std::vector<Sample>& samples, const RunConfig& cfg, JsonLog log = {}) {
  if (samples.empty()) throw InvalidArgument("dataset is empty");
  auto start = std::chrono::steady_clock::now();
  StyleEncoder enc(cfg.model.style, writer_count(samples), cfg.seed);
  WriterIdTrainer tr(enc, cfg.pretrain);
  const auto data = writer_id_data(samples, cfg.model.style);
  auto history = tr.fit(data, [&](const PretrainRecord& r) { log.write(to_json(r)); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(enc), std::move(history), secs};
}

struct TrainResult {
  std::vector<double> stroke_losses;
  double seconds = 0.0;
};

/// Runs the trainer to `cfg.train.iterations`, logging every
/// `cfg.log_every` steps and calling `checkpoint` every
/// `cfg.checkpoint_every` steps. The model keeps its live weights; call
/// `trainer.apply_ema()` to sample from the averages.
inline TrainResult train_diffusion(diffusion::DiffusionTrainer& trainer, const RunConfig& cfg, JsonLog log = {},
                                   const std::function<void(long)>& checkpoint = {},
                                   const std::function<void(long)>& sample_dump = {}) {
  TrainResult res;
  const auto start = std::chrono::steady_clock::now();
  while (trainer.step() < cfg.train.iterations) {
    const auto r = trainer.train_step();
    res.stroke_losses.push_back(r.loss.stroke);
    if (r.step % cfg.log_every == 0 || r.step == cfg.train.iterations) {
      auto rec = to_json(r);
      rec["smoothed_stroke"] = smoothed(res.stroke_losses, res.stroke_losses.size());
      rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.write(rec);
    }
    if (checkpoint && cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) checkpoint(r.step);
    if (sample_dump && cfg.sample_every > 0 && r.step % cfg.sample_every == 0) sample_dump(r.step);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace strokegen
