#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>

#include "strokegen/checkpoint.hpp"
#include "strokegen/synthetic.hpp"

using namespace strokegen;
using namespace strokegen::diffusion;

namespace {

MultiScaleConfig tiny_style() {
  MultiScaleConfig c = MultiScaleConfig::toy();
  c.dim = 8;
  c.heads = 2;
  c.layers = 1;
  return c;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.style = tiny_style();
  c.text = {.dim = 16, .style_dim = 8, .heads = 2, .pos_features = 4};
  c.denoiser = {.dim = 16, .cond_dim = 16, .heads = 2, .layers = 1, .mlp_ratio = 2, .pos_features = 4,
                .time_features = 4, .position_scale = 0.05};
  c.steps = 10;
  c.schedule = "full";
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("strokegen_test_" + name)).string();
}

bool same_bits(const nn::Matrix& a, const nn::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("checkpoint container round trip is bit-exact") {
  Checkpoint c;
  c.meta["note"] = "x";
  c.meta["n"] = 3;
  nn::Matrix odd(2, 3);
  odd << 0.1, -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::infinity(),
      std::numeric_limits<double>::quiet_NaN(), -1e308;
  c.add("odd", odd);
  c.add("empty", nn::Matrix(0, 4));
  c.add("scalar", nn::Matrix::Constant(1, 1, 42.0));
  const auto bytes = c.serialize();
  CHECK(bytes.rfind("STROKEGEN-CKPT/1\n", 0) == 0);
  const auto back = Checkpoint::deserialize(bytes);
  CHECK(back.meta == c.meta);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].first == c.tensors[i].first);
    CHECK(same_bits(back.tensors[i].second, c.tensors[i].second));
  }
  CHECK(back.serialize() == bytes);
  CHECK_THROWS_AS(c.add("odd", odd), InvalidArgument);
  CHECK_THROWS_AS(back.tensor("missing"), CheckpointError);
}

TEST_CASE("corrupted checkpoints are rejected") {
  Checkpoint c;
  c.add("w", nn::Matrix::Constant(3, 3, 0.5));
  const auto bytes = c.serialize();
  auto flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x01;
  CHECK_THROWS_AS(Checkpoint::deserialize(flipped), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 8)), CheckpointError);
  auto v2 = bytes;
  v2[15] = '2';
  try {
    Checkpoint::deserialize(v2);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("incompatible checkpoint version 2") != std::string::npos);
  }
  CHECK_THROWS_AS(Checkpoint::deserialize("hello\n{}\n"), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::deserialize("STROKEGEN-CKPT/1\n{not json\n"), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::load(temp_path("does_not_exist")), CheckpointError);
}

TEST_CASE("file save and load") {
  Checkpoint c;
  c.meta["k"] = 1;
  c.add("w", nn::Matrix::Identity(4, 4));
  const auto path = temp_path("ckpt_file");
  c.save(path);
  const auto back = Checkpoint::load(path);
  CHECK(same_bits(back.tensor("w"), nn::Matrix::Identity(4, 4)));
  c.save(path + "2");
  std::ifstream a(path, std::ios::binary), b(path + "2", std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove(path);
  std::filesystem::remove(path + "2");
}

TEST_CASE("style encoder round trip") {
  StyleEncoder enc(tiny_style(), 3, 4);
  const auto back = style_encoder_from(Checkpoint::deserialize(style_checkpoint(enc).serialize()));
  CHECK(back.num_writers() == 3);
  const auto img = render_style_image(generate_synthetic(1, 1, default_vocab(), 2)[0].strokes, tiny_style());
  CHECK(same_bits(enc.encode(img).features, back.encode(img).features));
}

TEST_CASE("pretraining resumes bit-exactly") {
  const auto data = writer_id_data(generate_synthetic(2, 4, default_vocab(), 3), tiny_style());
  const std::vector<std::size_t> b1{0, 5}, b2{1, 6}, b3{2, 7};
  StyleEncoder enc(tiny_style(), 2, 4);
  WriterIdTrainer tr(enc, {.lr = 1e-2});
  tr.train_step(data, b1);
  tr.train_step(data, b2);
  const auto ckpt = Checkpoint::deserialize(style_checkpoint(enc, &tr).serialize());
  const double next = tr.train_step(data, b3);

  StyleEncoder enc2 = style_encoder_from(ckpt);
  WriterIdTrainer tr2(enc2, {.lr = 1e-2});
  restore_style_trainer(ckpt, tr2, enc2);
  CHECK(tr2.step() == 2);
  CHECK(tr2.train_step(data, b3) == next);
  for (const auto& p : enc.params()) CHECK(same_bits(p.value, enc2.params().get(p.name).value));
}

TEST_CASE("diffusion training resumes bit-exactly") {
  const auto data = generate_synthetic(2, 3, default_vocab(), 5);
  StyleEncoder style(tiny_style(), 2, 1);
  StrokeDiffusionModel model(tiny_model(), Vocab(), 2);
  TrainOptions opt{.iterations = 10, .batch = 2, .lr = 1e-3, .warmup = 3, .ema_decay = 0.9, .seed = 4};
  DiffusionTrainer tr(model, style, data, opt);
  tr.train_step();
  tr.train_step();
  const auto bytes = diffusion_checkpoint(model, style, &tr).serialize();
  {
    const auto c = Checkpoint::deserialize(bytes);
    for (const auto& p : model.params()) {
      CHECK(same_bits(c.tensor("model/" + p.name), tr.ema().at(p.name)));
      CHECK(same_bits(c.tensor("raw/" + p.name), p.value));
    }
  }
  const auto r3 = tr.train_step();
  const auto r4 = tr.train_step();

  const auto ckpt = Checkpoint::deserialize(bytes);
  auto loaded = diffusion_model_from(ckpt);
  for (const auto& p : loaded.model->params()) CHECK(same_bits(p.value, ckpt.tensor("model/" + p.name)));
  DiffusionTrainer tr2(*loaded.model, loaded.style, data, opt);
  restore_diffusion_trainer(ckpt, tr2, *loaded.model);
  const auto s3 = tr2.train_step();
  const auto s4 = tr2.train_step();
  CHECK(s3.step == r3.step);
  CHECK(s3.loss.total == r3.loss.total);
  CHECK(s4.loss.total == r4.loss.total);
  for (const auto& p : model.params()) CHECK(same_bits(p.value, loaded.model->params().get(p.name).value));
  CHECK(diffusion_checkpoint(model, style, &tr).serialize() == diffusion_checkpoint(*loaded.model, loaded.style, &tr2).serialize());
}

TEST_CASE("loaded model samples identically") {
  const auto data = generate_synthetic(2, 2, default_vocab(), 8);
  StyleEncoder style(tiny_style(), 2, 1);
  ModelConfig cfg = tiny_model();
  cfg.ablate_layout = true;
  StrokeDiffusionModel model(cfg, Vocab(), 6);
  model.set_stats(DataStats::from_samples(data));
  const auto loaded = diffusion_model_from(Checkpoint::deserialize(diffusion_checkpoint(model, style).serialize()));
  CHECK(loaded.model->config().ablate_layout);
  CHECK(loaded.model->text().layout_ablated());
  CHECK(loaded.model->stats().scale == model.stats().scale);
  const auto feats = style.encode(render_style_image(data[1].strokes, cfg.style));
  CHECK(model.sample(data[0].text, data[0].layout, feats, 5) ==
        loaded.model->sample(data[0].text, data[0].layout, loaded.style.encode(render_style_image(data[1].strokes, cfg.style)), 5));
}

TEST_CASE("checkpoint shape mismatch is reported") {
  StyleEncoder a(tiny_style(), 2, 1);
  StyleEncoder b(tiny_style(), 3, 1);
  CHECK_THROWS_AS(load_params(style_checkpoint(a), "style/", b.params()), CheckpointError);
  Checkpoint style_only = style_checkpoint(a);
  CHECK_THROWS_AS(diffusion_model_from(style_only), CheckpointError);
}

TEST_CASE("run config profiles and JSON round trip") {
  const auto toy = RunConfig::toy();
  CHECK_NOTHROW(toy.validate());
  CHECK(toy.model.denoiser.dim == 96);
  CHECK(toy.model.denoiser.layers == 4);
  CHECK(toy.model.denoiser.heads == 4);
  const auto full = RunConfig::full();
  CHECK_NOTHROW(full.validate());
  CHECK(full.model.style.full.height == 128);
  CHECK(full.model.style.full.width == 1024);
  CHECK(full.model.steps == 1000);
  for (const auto* c : {&toy, &full}) {
    const auto back = RunConfig::from_json(nlohmann::json::parse(c->to_json().dump()));
    CHECK(back.to_json() == c->to_json());
  }
  CHECK_THROWS_AS(RunConfig::for_profile("huge"), InvalidArgument);
}

TEST_CASE("run config applies partial overrides on the profile") {
  const auto c = RunConfig::from_json(nlohmann::json::parse(R"({"train": {"iterations": 7}, "model": {"steps": 20}})"));
  CHECK(c.train.iterations == 7);
  CHECK(c.model.steps == 20);
  CHECK(c.train.batch == RunConfig::toy().train.batch);
  const auto f = RunConfig::from_json(nlohmann::json::parse(R"({"profile": "full", "seed": 9})"));
  CHECK(f.profile == "full");
  CHECK(f.seed == 9);
  CHECK(f.model.steps == 1000);
}

TEST_CASE("run config rejects unknown keys and bad values") {
  auto bad = [](const char* text) { return RunConfig::from_json(nlohmann::json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"iters": 5})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"model": {"denoiser": {"depth": 2}}})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"model": {"style": {"full": [32]}}})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"model": {"variance": "alpha"}})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"train": {"batch": "many"}})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"version": 2})"), InvalidArgument);
  CHECK_THROWS_AS(bad(R"({"model": {"text": {"dim": 24}}})"), InvalidArgument);
  try {
    bad(R"({"model": {"denoiser": {"depth": 2}}})");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()) == "config.model.denoiser: unknown key \"depth\"");
  }
}
