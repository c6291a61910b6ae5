#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "strokegen/diffusion/model.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/style_encoder.hpp"
#include "strokegen/style_training.hpp"

namespace strokegen {

inline constexpr int kConfigVersion = 1;

namespace config_detail {

using nlohmann::json;

/// Reads fields of one JSON object; every key must be consumed by `done()`.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + ": expected an object");
  }

  template <class T>
  Reader& operator()(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  template <class F>
  Reader& object(const char* key, F&& read) {
    seen_.insert(key);
    if (j_.contains(key)) read(j_.at(key), where_ + "." + key);
    return *this;
  }

  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument(where_ + ": unknown key \"" + k + "\"");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline json size_json(const ImageSize& s) { return json::array({s.height, s.width}); }

inline ImageSize size_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw InvalidArgument(where + ": expected [height, width]");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace config_detail

inline nlohmann::json to_json(const MultiScaleConfig& c) {
  using config_detail::size_json;
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& s : c.scales) scales.push_back(size_json(s));
  return {{"full", size_json(c.full)}, {"scales", scales},       {"patch", c.patch},
          {"grid_h", c.grid_h},        {"grid_w", c.grid_w},     {"dim", c.dim},
          {"heads", c.heads},          {"layers", c.layers},     {"mlp_ratio", c.mlp_ratio},
          {"channels", c.channels},    {"local_crop", size_json(c.local_crop)}, {"line_width", c.line_width}};
}

inline void from_json(const nlohmann::json& j, MultiScaleConfig& c, const std::string& where = "style") {
  using config_detail::size_from;
  config_detail::Reader r(j, where);
  r.object("full", [&](const nlohmann::json& v, const std::string& w) { c.full = size_from(v, w); })
      .object("scales",
              [&](const nlohmann::json& v, const std::string& w) {
                if (!v.is_array()) throw InvalidArgument(w + ": expected an array");
                c.scales.clear();
                for (const auto& s : v) c.scales.push_back(size_from(s, w));
              })
      .object("local_crop", [&](const nlohmann::json& v, const std::string& w) { c.local_crop = size_from(v, w); })
      ("patch", c.patch)("grid_h", c.grid_h)("grid_w", c.grid_w)("dim", c.dim)("heads", c.heads)("layers", c.layers)(
          "mlp_ratio", c.mlp_ratio)("channels", c.channels)("line_width", c.line_width)
      .done();
}

inline nlohmann::json to_json(const TextLayoutConfig& c) {
  return {{"dim", c.dim}, {"style_dim", c.style_dim}, {"heads", c.heads}, {"pos_features", c.pos_features}};
}

inline void from_json(const nlohmann::json& j, TextLayoutConfig& c, const std::string& where = "text") {
  config_detail::Reader(j, where)("dim", c.dim)("style_dim", c.style_dim)("heads", c.heads)("pos_features",
                                                                                           c.pos_features)
      .done();
}

inline nlohmann::json to_json(const diffusion::DenoiserConfig& c) {
  return {{"dim", c.dim},
          {"cond_dim", c.cond_dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"mlp_ratio", c.mlp_ratio},
          {"pos_features", c.pos_features},
          {"time_features", c.time_features},
          {"position_scale", c.position_scale}};
}

inline void from_json(const nlohmann::json& j, diffusion::DenoiserConfig& c, const std::string& where = "denoiser") {
  config_detail::Reader(j, where)("dim", c.dim)("cond_dim", c.cond_dim)("heads", c.heads)("layers", c.layers)(
      "mlp_ratio", c.mlp_ratio)("pos_features", c.pos_features)("time_features", c.time_features)("position_scale",
                                                                                                  c.position_scale)
      .done();
}

inline nlohmann::json to_json(const diffusion::ModelConfig& c) {
  return {{"style", to_json(c.style)},
          {"text", to_json(c.text)},
          {"denoiser", to_json(c.denoiser)},
          {"steps", c.steps},
          {"schedule", c.schedule},
          {"variance", diffusion::to_string(c.variance)},
          {"pen_weight", c.pen_weight},
          {"init", c.init == diffusion::InitNoise::gaussian ? "gaussian" : "uniform"},
          {"ablate_layout", c.ablate_layout}};
}

inline diffusion::InitNoise parse_init(const std::string& s) {
  if (s == "gaussian") return diffusion::InitNoise::gaussian;
  if (s == "uniform") return diffusion::InitNoise::uniform;
  throw InvalidArgument("unknown initial noise \"" + s + "\" (expected gaussian or uniform)");
}

inline void from_json(const nlohmann::json& j, diffusion::ModelConfig& c, const std::string& where = "model") {
  std::string variance = diffusion::to_string(c.variance);
  std::string init = c.init == diffusion::InitNoise::gaussian ? "gaussian" : "uniform";
  config_detail::Reader(j, where)
      .object("style", [&](const nlohmann::json& v, const std::string& w) { from_json(v, c.style, w); })
      .object("text", [&](const nlohmann::json& v, const std::string& w) { from_json(v, c.text, w); })
      .object("denoiser", [&](const nlohmann::json& v, const std::string& w) { from_json(v, c.denoiser, w); })(
          "steps", c.steps)("schedule", c.schedule)("variance", variance)("pen_weight", c.pen_weight)("init", init)(
          "ablate_layout", c.ablate_layout)
      .done();
  c.variance = diffusion::parse_variance(variance);
  c.init = parse_init(init);
}

struct DataConfig {
  int writers = 5;
  int per_writer = 200;
  std::uint64_t seed = 7;
};

/// Everything a run needs. Loading starts from the named profile's
/// defaults and applies the file on top.
struct RunConfig {
  int version = kConfigVersion;
  std::string profile = "toy";
  std::uint64_t seed = 1;
  DataConfig data;
  diffusion::ModelConfig model;
  PretrainOptions pretrain;
  diffusion::TrainOptions train;
  int checkpoint_every = 0;  // iterations; 0 writes only the final checkpoint
  int sample_every = 0;      // iterations between sample dumps; 0 disables
  int log_every = 50;

  static RunConfig toy() {
    RunConfig c;
    c.model.text.dim = c.model.denoiser.dim = c.model.denoiser.cond_dim = 96;
    c.model.text.heads = 4;
    c.model.denoiser.layers = 4;
    c.model.variance = diffusion::Variance::zero;
    c.pretrain.epochs = 8;
    c.pretrain.max_seconds = 540.0;
    c.train.iterations = 2000;
    c.train.batch = 48;
    return c;
  }

  /// Full-size dimensions; reference only, far beyond a desk CPU.
  static RunConfig full() {
    RunConfig c;
    c.profile = "full";
    c.model.style = MultiScaleConfig::full_size();
    c.model.text = {.dim = 256, .style_dim = c.model.style.dim, .heads = 4, .pos_features = 32};
    c.model.denoiser = {.dim = 256, .cond_dim = 256, .heads = 8, .layers = 8, .mlp_ratio = 4, .pos_features = 32,
                        .time_features = 32, .position_scale = 0.05};
    c.model.steps = 1000;
    c.model.schedule = "full";
    c.pretrain.epochs = 50;
    c.train.iterations = 60000;
    c.train.batch = 64;
    c.train.lr = 1e-4;
    c.checkpoint_every = 5000;
    return c;
  }

  static RunConfig for_profile(const std::string& p) {
    if (p == "toy") return toy();
    if (p == "full") return full();
    throw InvalidArgument("unknown profile \"" + p + "\" (expected toy or full)");
  }

  void validate() const {
    if (version != kConfigVersion)
      throw InvalidArgument("unsupported config version " + std::to_string(version) + " (expected " +
                            std::to_string(kConfigVersion) + ")");
    model.validate();
    if (data.writers < 1 || data.per_writer < 1) throw InvalidArgument("data needs at least one writer and sample");
    if (pretrain.epochs < 1 || pretrain.batch < 1 || !(pretrain.lr > 0))
      throw InvalidArgument("invalid pretraining options");
    if (!(pretrain.val_fraction > 0 && pretrain.val_fraction < 1))
      throw InvalidArgument("val_fraction must lie in (0, 1)");
    if (train.iterations < 0 || train.batch < 1 || !(train.lr > 0) || train.warmup < 0)
      throw InvalidArgument("invalid training options");
    if (!(train.ema_decay >= 0 && train.ema_decay < 1)) throw InvalidArgument("ema_decay must lie in [0, 1)");
    if (checkpoint_every < 0 || sample_every < 0 || log_every < 1) throw InvalidArgument("invalid cadence");
  }

  nlohmann::json to_json() const {
    return {{"version", version},
            {"profile", profile},
            {"seed", seed},
            {"data", {{"writers", data.writers}, {"per_writer", data.per_writer}, {"seed", data.seed}}},
            {"model", strokegen::to_json(model)},
            {"pretrain",
             {{"epochs", pretrain.epochs},
              {"batch", pretrain.batch},
              {"lr", pretrain.lr},
              {"val_fraction", pretrain.val_fraction},
              {"eval_every", pretrain.eval_every},
              {"max_seconds", pretrain.max_seconds},
              {"seed", pretrain.seed}}},
            {"train",
             {{"iterations", train.iterations},
              {"batch", train.batch},
              {"lr", train.lr},
              {"warmup", train.warmup},
              {"ema_decay", train.ema_decay},
              {"seed", train.seed}}},
            {"checkpoint_every", checkpoint_every},
            {"sample_every", sample_every},
            {"log_every", log_every}};
  }

  /// Profile named in `j` (default toy) with `j` applied on top.
  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c = for_profile(profile_of(j));
    c.apply(j);
    return c;
  }

  static std::string profile_of(const nlohmann::json& j, const std::string& fallback = "toy") {
    if (!j.is_object()) throw InvalidArgument("config: expected an object");
    if (!j.contains("profile")) return fallback;
    if (!j.at("profile").is_string()) throw InvalidArgument("config.profile: expected a string");
    return j.at("profile").get<std::string>();
  }

  /// Overwrites the fields present in `j`; unknown keys are rejected.
  void apply(const nlohmann::json& j) {
    RunConfig& c = *this;
    config_detail::Reader(j, "config")("version", c.version)("profile", c.profile)("seed", c.seed)
        .object("data",
                [&](const nlohmann::json& v, const std::string& w) {
                  config_detail::Reader(v, w)("writers", c.data.writers)("per_writer", c.data.per_writer)(
                      "seed", c.data.seed)
                      .done();
                })
        .object("model", [&](const nlohmann::json& v, const std::string& w) { strokegen::from_json(v, c.model, w); })
        .object("pretrain",
                [&](const nlohmann::json& v, const std::string& w) {
                  auto& p = c.pretrain;
                  config_detail::Reader(v, w)("epochs", p.epochs)("batch", p.batch)("lr", p.lr)(
                      "val_fraction", p.val_fraction)("eval_every", p.eval_every)("max_seconds", p.max_seconds)(
                      "seed", p.seed)
                      .done();
                })
        .object("train",
                [&](const nlohmann::json& v, const std::string& w) {
                  auto& t = c.train;
                  config_detail::Reader(v, w)("iterations", t.iterations)("batch", t.batch)("lr", t.lr)(
                      "warmup", t.warmup)("ema_decay", t.ema_decay)("seed", t.seed)
                      .done();
                })("checkpoint_every", c.checkpoint_every)("sample_every", c.sample_every)("log_every", c.log_every)
        .done();
    c.validate();
  }

  static nlohmann::json read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InvalidArgument("cannot open config " + path);
    try {
      return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidArgument("config " + path + ": " + e.what());
    }
  }

  static RunConfig load(const std::string& path) { return from_json(read_file(path)); }
};

}  // namespace strokegen
