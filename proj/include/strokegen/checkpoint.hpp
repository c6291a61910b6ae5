#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "strokegen/config.hpp"
#include "strokegen/diffusion/model.hpp"
#include "strokegen/errors.hpp"
#include "strokegen/nn/layers.hpp"
#include "strokegen/style_encoder.hpp"
#include "strokegen/style_training.hpp"

namespace strokegen {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "STROKEGEN-CKPT/";

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named tensors plus free-form JSON metadata.
///
/// File layout: the line "STROKEGEN-CKPT/1", one line of JSON header
/// (metadata, tensor manifest, payload size and FNV-1a 64 hash), then the
/// tensors as little-endian doubles, row-major, in manifest order.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Matrix>> tensors;

  void add(const std::string& name, const nn::Matrix& m) {
    if (has(name)) throw InvalidArgument("duplicate tensor " + name);
    tensors.emplace_back(name, m);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }

  const nn::Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw CheckpointError("checkpoint has no tensor \"" + name + "\"");
  }

  std::string serialize() const {
    std::string payload;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, m] : tensors) {
      manifest.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        std::uint64_t bits;
        const double v = m.data()[i];
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) payload += static_cast<char>((bits >> (8 * b)) & 0xFF);
      }
    }
    std::ostringstream hash;
    hash << std::hex << fnv1a64(payload);
    const nlohmann::json header{{"meta", meta},
                                {"tensors", manifest},
                                {"payload_bytes", payload.size()},
                                {"fnv1a64", hash.str()}};
    return std::string(kCheckpointMagic) + std::to_string(kCheckpointVersion) + "\n" + header.dump() + "\n" + payload;
  }

  static Checkpoint deserialize(const std::string& bytes) {
    const std::string magic(kCheckpointMagic);
    const auto eol = bytes.find('\n');
    if (bytes.compare(0, magic.size(), magic) != 0 || eol == std::string::npos)
      throw CheckpointError("not a strokegen checkpoint");
    const std::string version = bytes.substr(magic.size(), eol - magic.size());
    if (version != std::to_string(kCheckpointVersion))
      throw CheckpointError("incompatible checkpoint version " + version + " (this build reads version " +
                            std::to_string(kCheckpointVersion) + ")");
    const auto eoh = bytes.find('\n', eol + 1);
    if (eoh == std::string::npos) throw CheckpointError("truncated checkpoint header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(eol + 1, eoh - eol - 1));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const std::string payload = bytes.substr(eoh + 1);
    Checkpoint c;
    try {
      if (payload.size() != header.at("payload_bytes").get<std::size_t>())
        throw CheckpointError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, header says " +
                              header.at("payload_bytes").dump());
      std::ostringstream hash;
      hash << std::hex << fnv1a64(payload);
      if (hash.str() != header.at("fnv1a64").get<std::string>()) throw CheckpointError("checkpoint hash mismatch");
      c.meta = header.at("meta");
      std::size_t off = 0;
      for (const auto& t : header.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
        if (rows < 0 || cols < 0 || off + static_cast<std::size_t>(rows * cols) * 8 > payload.size())
          throw CheckpointError("tensor manifest does not match the payload");
        nn::Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
          std::uint64_t bits = 0;
          for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[off + b])) << (8 * b);
          std::memcpy(m.data() + i, &bits, sizeof bits);
          off += 8;
        }
        c.add(t.at("name").get<std::string>(), m);
      }
      if (off != payload.size()) throw CheckpointError("tensor manifest does not match the payload");
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open " + path + " for writing");
    const std::string bytes = serialize();
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("failed writing " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize(ss.str());
  }
};

inline void add_params(Checkpoint& c, const std::string& prefix, const nn::ParamStore& store) {
  for (const auto& p : store) c.add(prefix + p.name, p.value);
}

/// Every parameter of `store` must be present with the same shape.
inline void load_params(const Checkpoint& c, const std::string& prefix, nn::ParamStore& store) {
  for (auto& p : store) {
    const nn::Matrix& m = c.tensor(prefix + p.name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", model " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    p.value = m;
  }
}

/// Moments in parameter order, so equal states give equal bytes.
inline void add_adam(Checkpoint& c, const std::string& prefix, const nn::Adam& adam, const nn::ParamStore& store) {
  c.meta[prefix + "step"] = adam.step_count();
  for (const auto& p : store) {
    auto it = adam.state().find(p.name);
    if (it == adam.state().end()) continue;
    c.add(prefix + "m/" + p.name, it->second.m);
    c.add(prefix + "v/" + p.name, it->second.v);
  }
}

inline void load_adam(const Checkpoint& c, const std::string& prefix, nn::Adam& adam, const nn::ParamStore& store) {
  adam.state().clear();
  adam.set_step_count(c.meta.value(prefix + "step", 0L));
  for (const auto& p : store)
    if (c.has(prefix + "m/" + p.name))
      adam.state()[p.name] = {c.tensor(prefix + "m/" + p.name), c.tensor(prefix + "v/" + p.name)};
}

// ---- style encoder ----

inline void add_style_encoder(Checkpoint& c, const StyleEncoder& enc) {
  c.meta["style_config"] = to_json(enc.config());
  c.meta["num_writers"] = enc.num_writers();
  add_params(c, "style/", enc.params());
}

inline StyleEncoder style_encoder_from(const Checkpoint& c) {
  if (!c.meta.contains("style_config")) throw CheckpointError("checkpoint holds no style encoder");
  MultiScaleConfig cfg;
  from_json(c.meta.at("style_config"), cfg);
  StyleEncoder enc(cfg, c.meta.at("num_writers").get<int>(), 0);
  load_params(c, "style/", enc.params());
  return enc;
}

inline Checkpoint style_checkpoint(const StyleEncoder& enc, WriterIdTrainer* trainer = nullptr) {
  Checkpoint c;
  c.meta["kind"] = "style";
  add_style_encoder(c, enc);
  if (trainer) {
    c.meta["trainer_step"] = trainer->step();
    c.meta["rng"] = trainer->rng().state();
    add_adam(c, "adam/", trainer->optimizer(), enc.params());
  }
  return c;
}

inline void restore_style_trainer(const Checkpoint& c, WriterIdTrainer& trainer, const StyleEncoder& enc) {
  if (!c.meta.contains("trainer_step")) throw CheckpointError("checkpoint holds no pretraining state");
  trainer.set_step(c.meta.at("trainer_step").get<long>());
  trainer.rng().set_state(c.meta.at("rng").get<std::string>());
  load_adam(c, "adam/", trainer.optimizer(), enc.params());
}

// ---- diffusion model ----

inline nlohmann::json stats_json(const diffusion::DataStats& s) {
  return {{"scale", {s.scale[0], s.scale[1]}}, {"points_per_glyph", s.points_per_glyph}};
}

inline diffusion::DataStats stats_from(const nlohmann::json& j) {
  diffusion::DataStats s;
  s.scale = {j.at("scale").at(0).get<double>(), j.at("scale").at(1).get<double>()};
  s.points_per_glyph = j.at("points_per_glyph").get<double>();
  return s;
}

/// Model weights, statistics, the frozen style encoder and, with a
/// trainer, everything needed to resume bit-exactly. With EMA enabled the
/// sampling weights under model/ are the averages and the live weights go
/// under raw/.
inline Checkpoint diffusion_checkpoint(const diffusion::StrokeDiffusionModel& model, const StyleEncoder& style,
                                       diffusion::DiffusionTrainer* trainer = nullptr) {
  Checkpoint c;
  c.meta["kind"] = "diffusion";
  c.meta["model_config"] = to_json(model.config());
  c.meta["vocab"] = model.text().vocab().manifest();
  c.meta["stats"] = stats_json(model.stats());
  if (trainer && !trainer->ema().empty()) {
    for (const auto& p : model.params()) {
      auto it = trainer->ema().find(p.name);
      c.add("model/" + p.name, it != trainer->ema().end() ? it->second : p.value);
    }
    add_params(c, "raw/", model.params());
  } else {
    add_params(c, "model/", model.params());
  }
  add_style_encoder(c, style);
  if (trainer) {
    c.meta["trainer_step"] = trainer->step();
    c.meta["rng"] = trainer->rng().state();
    add_adam(c, "adam/", trainer->optimizer(), model.params());
  }
  return c;
}

struct LoadedModel {
  std::unique_ptr<diffusion::StrokeDiffusionModel> model;
  StyleEncoder style;
};

inline LoadedModel diffusion_model_from(const Checkpoint& c) {
  if (c.meta.value("kind", "") != "diffusion") throw CheckpointError("not a diffusion checkpoint");
  try {
    diffusion::ModelConfig cfg;
    from_json(c.meta.at("model_config"), cfg);
    auto model = std::make_unique<diffusion::StrokeDiffusionModel>(
        cfg, Vocab::from_manifest(c.meta.at("vocab").get<std::string>()), 0);
    load_params(c, "model/", model->params());
    model->set_stats(stats_from(c.meta.at("stats")));
    return {std::move(model), style_encoder_from(c)};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("checkpoint config rejected: ") + e.what());
  }
}

/// Puts the live weights back into `model` and restores optimizer, RNG and
/// EMA state.
inline void restore_diffusion_trainer(const Checkpoint& c, diffusion::DiffusionTrainer& trainer,
                                      diffusion::StrokeDiffusionModel& model) {
  if (!c.meta.contains("trainer_step")) throw CheckpointError("checkpoint holds no training state");
  trainer.set_step(c.meta.at("trainer_step").get<long>());
  trainer.rng().set_state(c.meta.at("rng").get<std::string>());
  load_adam(c, "adam/", trainer.optimizer(), model.params());
  auto& ema = trainer.ema();
  if (ema.empty()) return;
  for (auto& [name, m] : ema) m = c.tensor("model/" + name);
  load_params(c, "raw/", model.params());
}

}  // namespace strokegen
