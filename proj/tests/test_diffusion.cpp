#include <catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "strokegen/diffusion/model.hpp"
#include "strokegen/synthetic.hpp"

using namespace strokegen;
using namespace strokegen::diffusion;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.style.dim = 8;
  c.style.heads = 2;
  c.style.layers = 1;
  c.text.dim = 16;
  c.text.style_dim = 8;
  c.text.heads = 2;
  c.text.pos_features = 4;
  c.denoiser.dim = 16;
  c.denoiser.cond_dim = 16;
  c.denoiser.heads = 2;
  c.denoiser.layers = 1;
  c.denoiser.pos_features = 4;
  c.denoiser.time_features = 4;
  c.steps = 10;
  c.schedule = "full";
  return c;
}

struct ModelFixture {
  ModelConfig cfg = tiny_model_config();
  std::vector<Sample> data = generate_synthetic(2, 3, default_vocab(), 21);
  StyleEncoder style{cfg.style, 2, 5};
  StrokeDiffusionModel model{cfg, Vocab(), 9};
  std::vector<MultiScaleStyleFeatures> features;

  ModelFixture() {
    model.set_stats(DataStats::from_samples(data));
    for (const auto& s : data) features.push_back(style.encode(render_style_image(s.strokes, cfg.style)));
  }
};

// Schedule recomputed from the linear beta formula, independent of the
// library tables.
struct OracleSchedule {
  std::vector<double> beta, abar;
  OracleSchedule(int T, double lo, double hi) {
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
      beta.push_back(lo + (hi - lo) * t / (T - 1));
      prod *= 1.0 - beta.back();
      abar.push_back(prod);
    }
  }
};

Prediction fixed_predictor(const nn::Matrix& y, int t, double) {
  Prediction p;
  p.eps = 0.3 * y.array() + std::sin(0.7 * t);
  p.pen = nn::Matrix::Constant(y.rows(), 1, 0.25);
  return p;
}

}  // namespace

TEST_CASE("full schedule with two steps") {
  const auto s = make_schedule(2, "full");
  CHECK_THAT(s.ab(1), WithinAbs(0.9999, 1e-15));
  CHECK_THAT(s.ab(2), WithinAbs(0.9999 * 0.98, 1e-15));
  CHECK_THAT(s.s(2), WithinAbs(std::sqrt(0.02), 1e-15));
  CHECK_THAT(s.sqrt_alpha_bar(1), WithinAbs(std::sqrt(0.9999), 1e-15));
}

TEST_CASE("schedule invariants") {
  for (int T : {2, 5, 50, 1000})
    for (const char* profile : {"full", "toy"})
      for (auto var : {Variance::beta, Variance::posterior, Variance::zero}) {
        const auto s = make_schedule(T, profile, var);
        REQUIRE(s.T == T);
        for (int t = 1; t <= T; ++t) {
          CHECK(s.b(t) > 0.0);
          CHECK(s.b(t) < 1.0);
          CHECK_THAT(s.a(t), WithinAbs(1.0 - s.b(t), 1e-15));
          if (t > 1) {
            CHECK(s.b(t) > s.b(t - 1));
            CHECK(s.ab(t) < s.ab(t - 1));
          }
          if (var == Variance::beta) CHECK_THAT(s.s(t) * s.s(t), WithinRel(s.b(t), 1e-12));
          else CHECK(s.s(t) * s.s(t) <= s.b(t) * (1.0 + 1e-12));
        }
        if (var == Variance::posterior) CHECK(s.s(1) == 0.0);
        if (var == Variance::zero)
          for (int t = 1; t <= T; ++t) CHECK(s.s(t) == 0.0);
      }
}

TEST_CASE("toy schedule stretches the beta range") {
  const auto s = make_schedule(50, "toy");
  CHECK_THAT(s.b(1), WithinAbs(2e-3, 1e-15));
  CHECK_THAT(s.b(50), WithinAbs(0.4, 1e-15));
  CHECK(s.ab(50) < 1e-4);
  const auto full = make_schedule(1000, "toy");
  CHECK_THAT(full.b(1000), WithinAbs(0.02, 1e-15));
  CHECK_THROWS_AS(make_schedule(1, "full"), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, "cosine"), InvalidArgument);
  CHECK_THROWS_AS(parse_variance("sigma"), InvalidArgument);
  for (auto v : {Variance::beta, Variance::posterior, Variance::zero}) CHECK(parse_variance(to_string(v)) == v);
}

TEST_CASE("zero variance makes the chain independent of the noise stream") {
  const auto s = make_schedule(20, "full", Variance::zero);
  Rng a(1), b(2);
  const nn::Matrix yT = initial_noise(7, 2, a);
  const auto ra = reverse_chain(s, yT, fixed_predictor, a);
  const auto rb = reverse_chain(s, yT, fixed_predictor, b);
  CHECK(ra.y == rb.y);
  const auto noisy = make_schedule(20, "full", Variance::beta);
  Rng c(1), d(2);
  CHECK(reverse_chain(noisy, yT, fixed_predictor, c).y != reverse_chain(noisy, yT, fixed_predictor, d).y);
}

TEST_CASE("forward noise limits") {
  const auto s = make_schedule(50, "toy");
  nn::Matrix y0(2, 2);
  y0 << 1.0, -2.0, 0.5, 3.0;
  const nn::Matrix zero = nn::Matrix::Zero(2, 2);
  CHECK((forward_noise(y0, 1, zero, s) - std::sqrt(s.ab(1)) * y0).cwiseAbs().maxCoeff() < 1e-15);
  const nn::Matrix ones = nn::Matrix::Ones(2, 2);
  const nn::Matrix yT = forward_noise(y0, 50, ones, s);
  CHECK((yT - ones).cwiseAbs().maxCoeff() < 1e-2);
  CHECK_THROWS_AS(forward_noise(y0, 0, zero, s), InvalidArgument);
  CHECK_THROWS_AS(forward_noise(y0, 51, zero, s), InvalidArgument);
  CHECK_THROWS_AS(forward_noise(y0, 3, nn::Matrix::Zero(1, 2), s), InvalidArgument);
}

TEST_CASE("forward noise moments by Monte Carlo") {
  const auto s = make_schedule(50, "toy");
  const int t = 20;
  const int n = 100000;
  Rng rng(3);
  nn::Matrix y0(1, 1);
  y0 << 1.7;
  double sum = 0, sum2 = 0;
  for (int k = 0; k < n; ++k) {
    nn::Matrix e(1, 1);
    e << rng.normal();
    const double v = forward_noise(y0, t, e, s)(0, 0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double sd = std::sqrt(1.0 - s.ab(t));
  CHECK(std::abs(mean - std::sqrt(s.ab(t)) * 1.7) < 3.0 * sd / std::sqrt(n));
  // var of a sample variance of n normals is 2 sd^4 / n
  CHECK(std::abs(var - sd * sd) < 3.0 * std::sqrt(2.0 / n) * sd * sd);
}

TEST_CASE("initial noise has unit variance for both kinds") {
  for (auto kind : {InitNoise::gaussian, InitNoise::uniform}) {
    Rng rng(8);
    const nn::Matrix y = initial_noise(50000, 2, rng, kind);
    const double m = y.mean();
    const double v = (y.array() - m).square().mean();
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(v - 1.0) < 0.03);
    if (kind == InitNoise::uniform) CHECK(y.cwiseAbs().maxCoeff() <= std::sqrt(3.0));
  }
}

TEST_CASE("reverse chain matches an independent recurrence") {
  for (int T : {5, 10, 50}) {
    const double k = std::max(1.0, 1000.0 / T);
    const OracleSchedule o(T, 1e-4 * k, std::min(0.02 * k, 0.999));
    const auto s = make_schedule(T, "toy");
    Rng lib_rng(77);
    const nn::Matrix yT = initial_noise(6, 2, lib_rng);
    const auto res = reverse_chain(s, yT, fixed_predictor, lib_rng);

    Rng rng(77);
    nn::Matrix y(6, 2);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    for (int t = T; t >= 1; --t) {
      const double b = o.beta[static_cast<std::size_t>(t - 1)];
      const double ab = o.abar[static_cast<std::size_t>(t - 1)];
      const nn::Matrix e = fixed_predictor(y, t, 0.0).eps;
      nn::Matrix next = (y - b / std::sqrt(1.0 - ab) * e) / std::sqrt(1.0 - b);
      if (t > 1)
        for (Eigen::Index i = 0; i < next.size(); ++i) next.data()[i] += std::sqrt(b) * rng.normal();
      y = next;
    }
    INFO("T = " << T);
    CHECK((res.y - y).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(res.pen.rows() == 6);
  }
}

TEST_CASE("reverse step with the true noise gives the posterior mean") {
  const auto s = make_schedule(20, "toy");
  Rng rng(4);
  const nn::Matrix y0 = initial_noise(5, 2, rng);
  const nn::Matrix eps = initial_noise(5, 2, rng);
  for (int t : {2, 7, 20}) {
    const nn::Matrix yt = forward_noise(y0, t, eps, s);
    const double ab = s.ab(t), abp = s.ab(t - 1), b = s.b(t);
    const nn::Matrix mu = std::sqrt(abp) * b / (1.0 - ab) * y0 + std::sqrt(1.0 - b) * (1.0 - abp) / (1.0 - ab) * yt;
    CHECK((reverse_step(yt, eps, t, s, nullptr) - mu).cwiseAbs().maxCoeff() < 1e-10);
  }
  // at t = 1 the step recovers y0 exactly and ignores z
  const nn::Matrix y1 = forward_noise(y0, 1, eps, s);
  const nn::Matrix z = nn::Matrix::Ones(5, 2);
  CHECK((reverse_step(y1, eps, 1, s, &z) - y0).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reverse chain raises on divergence") {
  const auto s = make_schedule(10, "toy");
  Rng rng(1);
  const Predictor blowup = [](const nn::Matrix& y, int, double) {
    return Prediction{nn::Matrix::Constant(y.rows(), y.cols(), -1e4), nn::Matrix::Constant(y.rows(), 1, 0.5)};
  };
  CHECK_THROWS_AS(reverse_chain(s, initial_noise(3, 2, rng), blowup, rng), DivergenceError);
  const Predictor wrong = [](const nn::Matrix&, int, double) {
    return Prediction{nn::Matrix::Zero(1, 2), nn::Matrix::Zero(1, 1)};
  };
  CHECK_THROWS_AS(reverse_chain(s, initial_noise(3, 2, rng), wrong, rng), InvalidArgument);
}

TEST_CASE("stroke loss hand values") {
  nn::Matrix e(2, 2), h(2, 2);
  e << 1, 2, 0, 0;
  h << 0, 0, 0, 1;
  CHECK_THAT(loss_stroke(e, h), WithinAbs(6.0 / 4.0, 1e-15));
  CHECK(loss_stroke(e, e) == 0.0);
  CHECK_THROWS_AS(loss_stroke(e, nn::Matrix::Zero(1, 2)), InvalidArgument);
}

TEST_CASE("drawn loss hand values and symmetry") {
  CHECK_THAT(loss_drawn({1}, {0.5}), WithinAbs(std::log(2.0), 1e-15));
  CHECK_THAT(loss_drawn({0, 1}, {0.5, 0.5}), WithinAbs(std::log(2.0), 1e-15));
  CHECK_THAT(loss_drawn({1, 0}, {0.9, 0.2}), WithinAbs(-(std::log(0.9) + std::log(0.8)) / 2.0, 1e-15));
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const double p = rng.uniform(0.01, 0.99);
    CHECK_THAT(loss_drawn({1}, {p}), WithinAbs(loss_drawn({0}, {1.0 - p}), 1e-12));
  }
  CHECK_THROWS_AS(loss_drawn({1}, {0.0}), NumericalError);
  CHECK_THROWS_AS(loss_drawn({1}, {1.0}), NumericalError);
  CHECK_THROWS_AS(loss_drawn({1, 0}, {0.5}), InvalidArgument);
}

TEST_CASE("loss gradients by finite differences") {
  Rng rng(6);
  nn::Parameter p;
  p.name = "p";
  p.value = nn::Matrix::Zero(4, 1);
  for (Eigen::Index i = 0; i < 4; ++i) p.value(i, 0) = rng.uniform(0.1, 0.9);
  p.zero_grad();
  const std::vector<std::uint8_t> d0{1, 0, 0, 1};
  const auto r1 = testing::check_param_grads({&p}, [&](nn::Tape& t) { return loss_drawn(d0, t.param(p)); });
  CHECK(r1.max_rel < 1e-6);

  nn::Parameter q;
  q.name = "q";
  q.value = nn::normal_init(3, 2, 1.0, rng);
  q.zero_grad();
  const nn::Matrix target = nn::normal_init(3, 2, 1.0, rng);
  const auto r2 =
      testing::check_param_grads({&q}, [&](nn::Tape& t) { return loss_stroke(t.constant(target), t.param(q)); });
  CHECK(r2.max_rel < 1e-6);
}

TEST_CASE("data statistics and predicted length") {
  Sample s;
  s.text = "ab c";
  s.strokes = StrokeSequence({{3, 0, kPenDown}, {0, 4, kPenDown}, {-3, 0, kPenDown}, {0, -4, kPenUp},
                              {1, 1, kPenDown}, {1, -1, kPenUp}});
  const auto d = DataStats::from_samples({s});
  CHECK_THAT(d.scale[0], WithinAbs(std::sqrt(20.0 / 6.0), 1e-12));
  CHECK_THAT(d.scale[1], WithinAbs(std::sqrt(34.0 / 6.0), 1e-12));
  CHECK_THAT(d.points_per_glyph, WithinAbs(2.0, 1e-12));
  CHECK(d.predicted_length("hello you") == 16);
  CHECK_THROWS_AS(DataStats::from_samples({}), InvalidArgument);
}

TEST_CASE("model config validation") {
  ModelConfig c = tiny_model_config();
  CHECK_NOTHROW(c.validate());
  c.text.style_dim = 9;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_model_config();
  c.denoiser.cond_dim = 8;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_model_config();
  c.steps = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("denoiser ignores the conditioning when cross-attention values are zero") {
  nn::ParamStore store;
  Rng rng(3);
  DenoiserConfig cfg = tiny_model_config().denoiser;
  cfg.layers = 2;
  Denoiser den(store, cfg, rng);
  for (int l = 0; l < 2; ++l) store.get("denoiser.block" + std::to_string(l) + ".cross.v.weight").value.setZero();
  nn::Tape t(false);
  const nn::Matrix y = nn::normal_init(7, 2, 1.0, rng);
  const nn::Var x = den.tokens(t, y, {0.1, 0.05}, 3.5);
  const auto a = den(t, x, t.constant(nn::normal_init(4, 16, 1.0, rng)), 0.5);
  const auto b = den(t, x, t.constant(nn::normal_init(9, 16, 1.0, rng)), 0.5);
  CHECK((a.eps.value() - b.eps.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.pen.value() - b.pen.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.eps.rows() == 7);
  CHECK(a.eps.cols() == 2);
  CHECK(a.pen.value().minCoeff() >= kPenClamp);
  CHECK(a.pen.value().maxCoeff() <= 1.0 - kPenClamp);
  const auto c = den(t, x, t.constant(nn::normal_init(4, 16, 1.0, rng)), 0.9);
  CHECK((a.eps.value() - c.eps.value()).cwiseAbs().maxCoeff() > 1e-9);
  CHECK_THROWS_AS(den(t, x, t.constant(nn::Matrix::Zero(4, 8)), 0.5), InvalidArgument);
  CHECK_THROWS_AS(den.tokens(t, nn::Matrix::Zero(0, 2), {1, 1}, 8), InvalidArgument);
  const nn::Matrix same = den.tokens(t, y, {0.1, 0.05}, 3.5, {0.0, 0.0}).value();
  const nn::Matrix split = den.tokens(t, y, {0.1, 0.05}, 3.5, {0.0, 0.5}).value();
  CHECK((same - x.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((split.topRows(4) - x.value().topRows(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((split.bottomRows(3) - x.value().bottomRows(3)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("padding does not change the losses") {
  ModelFixture f;
  const auto item = make_batch_item(f.data[0], f.model.stats(), &f.features[1]);
  const auto padded = make_batch_item(f.data[0], f.model.stats(), &f.features[1], item.mask.size() + 17);
  CHECK(padded.mask.size() == item.mask.size() + 17);
  Rng r1(5), r2(5);
  const auto a = f.model.batch_losses({item}, r1, false);
  const auto b = f.model.batch_losses({padded}, r2, false);
  CHECK(a.stroke == b.stroke);
  CHECK(a.drawn == b.drawn);
}

TEST_CASE("batch losses stay finite over many random batches") {
  ModelFixture f;
  Rng rng(12);
  for (int k = 0; k < 100; ++k) {
    std::vector<BatchItem> batch;
    for (int b = 0; b < 2; ++b) {
      const auto i = rng.below(f.data.size());
      batch.push_back(make_batch_item(f.data[i], f.model.stats(), &f.features[rng.below(f.data.size())], 60));
    }
    const auto r = f.model.batch_losses(batch, rng, false);
    CHECK(std::isfinite(r.total));
    CHECK(r.stroke >= 0.0);
    CHECK(r.drawn >= 0.0);
  }
}

TEST_CASE("end-to-end gradients on a short sequence") {
  ModelFixture f;
  Sample s = f.data[0];
  s.text = "ab";
  s.layout.boxes = {{"ab", Box{0.0, 0.0, 1.2, 1.0}}};
  s.strokes = StrokeSequence({{0.2, 0.1, kPenDown}, {0.1, 0.3, kPenUp}, {0.3, -0.2, kPenDown}, {-0.1, 0.1, kPenUp}});
  const auto item = make_batch_item(s, f.model.stats(), &f.features[0]);
  std::vector<nn::Parameter*> params;
  for (auto& p : f.model.params()) params.push_back(&p);
  const auto r = testing::check_param_grads(
      params,
      [&](nn::Tape& t) {
        Rng rng(31);
        auto [ls, ld] = f.model.sample_losses(t, item, rng, false);
        return ls + ld;
      },
      1e-5, 8);
  INFO(r.worst);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("training overfits a single sample with fixed noise") {
  ModelFixture f;
  const auto item = make_batch_item(f.data[0], f.model.stats(), &f.features[1]);
  nn::Adam adam({.lr = 3e-3});
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 500; ++step) {
    Rng rng(99);
    f.model.params().zero_grad();
    last = f.model.batch_losses({item}, rng, true, false).total;
    if (step == 0) first = last;
    adam.step(f.model.params());
  }
  INFO("first " << first << " last " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("sampling is deterministic in the seed") {
  ModelFixture f;
  const auto& s = f.data[0];
  const auto a = f.model.sample(s.text, s.layout, f.features[0], 42);
  const auto b = f.model.sample(s.text, s.layout, f.features[0], 42);
  const auto c = f.model.sample(s.text, s.layout, f.features[0], 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.size() == f.model.stats().predicted_length(s.text));
  CHECK(f.model.sample(s.text, s.layout, f.features[0], 1, 5).size() == 5);
}

TEST_CASE("sampling validates text against the layout") {
  ModelFixture f;
  const auto& s = f.data[0];
  auto extra = s.layout;
  const double right = extra.boxes.back().bbox.x1;
  extra.boxes.push_back({"zz", Box{right + 1.0, 0.0, right + 2.0, 1.0}});
  CHECK_THROWS_AS(f.model.sample(s.text, extra, f.features[0], 1), LayoutError);
  CHECK_THROWS_AS(f.model.sample("", s.layout, f.features[0], 1), Error);
}

TEST_CASE("the ablated model ignores the layout") {
  ModelConfig cfg = tiny_model_config();
  cfg.ablate_layout = true;
  ModelFixture f;
  StrokeDiffusionModel model(cfg, Vocab(), 9);
  model.set_stats(f.model.stats());
  const auto& s = f.data[0];
  auto moved = s.layout;
  for (auto& b : moved.boxes) b.bbox = Box{b.bbox.x0 + 0.5, b.bbox.y0, b.bbox.x1 + 2.0, b.bbox.y1 + 0.3};
  CHECK(model.sample(s.text, s.layout, f.features[0], 3) == model.sample(s.text, moved, f.features[0], 3));
  CHECK_FALSE(f.model.sample(s.text, s.layout, f.features[0], 3) == f.model.sample(s.text, moved, f.features[0], 3));
}

TEST_CASE("trainer keeps an exponential moving average") {
  ModelFixture f;
  TrainOptions opt;
  opt.batch = 2;
  opt.ema_decay = 0.9;
  const auto& before = f.model.params().get("denoiser.eps.weight").value;
  const nn::Matrix init = before;
  DiffusionTrainer tr(f.model, f.style, f.data, opt);
  const auto r = tr.train_step();
  CHECK(r.step == 1);
  CHECK_THAT(r.lr, WithinAbs(opt.lr / opt.warmup, 1e-15));
  const nn::Matrix now = f.model.params().get("denoiser.eps.weight").value;
  const nn::Matrix expected = 0.9 * init + 0.1 * now;
  CHECK((tr.ema().at("denoiser.eps.weight") - expected).cwiseAbs().maxCoeff() < 1e-15);
  tr.apply_ema();
  CHECK(f.model.params().get("denoiser.eps.weight").value == tr.ema().at("denoiser.eps.weight"));
}

TEST_CASE("style partner comes from the same writer") {
  ModelFixture f;
  DiffusionTrainer tr(f.model, f.style, f.data, {});
  for (std::size_t i = 0; i < f.data.size(); ++i)
    for (int k = 0; k < 20; ++k) {
      const auto j = tr.style_partner(i);
      CHECK(j != i);
      CHECK(f.data[j].writer_id == f.data[i].writer_id);
    }
}
