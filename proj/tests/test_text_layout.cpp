#include <catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "strokegen/text_layout.hpp"

using namespace strokegen;
using Catch::Matchers::WithinAbs;

namespace {

TextLayoutConfig small_config() {
  TextLayoutConfig c;
  c.dim = 8;
  c.style_dim = 6;
  c.heads = 2;
  c.pos_features = 4;
  return c;
}

WordLayout two_words() {
  WordLayout l;
  l.boxes.push_back({"ab", Box{0.1, 0.2, 1.3, 0.9}});
  l.boxes.push_back({"cd", Box{2.0, 0.1, 3.1, 0.95}});
  return l;
}

nn::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) { return nn::normal_init(r, c, 1.0, rng); }

struct Fixture {
  nn::ParamStore store;
  Rng rng{11};
  TextLayoutEncoder enc{store, small_config(), Vocab(), rng};
};

}  // namespace

TEST_CASE("tokenize maps printable ASCII to consecutive ids") {
  const Vocab v;
  CHECK(v.size() == 95);
  CHECK(tokenize("ab", v) == std::vector<int>{65, 66});
  CHECK(tokenize(" ~", v) == std::vector<int>{0, 94});
  CHECK(detokenize({65, 0, 66}, v) == "a b");
  CHECK_THROWS_AS(detokenize({95}, v), InvalidArgument);
}

TEST_CASE("tokenize round-trips random printable strings") {
  const Vocab v;
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    std::string s;
    const auto n = 1 + rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i) s += static_cast<char>(0x20 + rng.below(95));
    CHECK(detokenize(tokenize(s, v), v) == s);
  }
}

TEST_CASE("out-of-vocabulary character reports its position") {
  const Vocab v;
  try {
    tokenize("a\xE2\x98\x83", v);
    FAIL("expected VocabError");
  } catch (const VocabError& e) {
    CHECK(e.position() == 1);
    CHECK(e.character() == U'☃');
  }
  CHECK_THROWS_AS(tokenize("a\xE2\x98", v), InvalidArgument);
}

TEST_CASE("vocab manifest round trip with escapes") {
  const Vocab v(U"a \\\té");
  const auto m = v.manifest();
  CHECK(m == "a\n\\s\n\\\\\n\\t\n\xC3\xA9\n");
  CHECK(Vocab::from_manifest(m) == v);
  CHECK(Vocab::from_manifest(Vocab().manifest()) == Vocab());
  CHECK_THROWS_AS(Vocab::from_manifest("ab\n"), ParseError);
  CHECK_THROWS_AS(Vocab(U"aa"), InvalidArgument);
}

TEST_CASE("char_positions of a two-word line") {
  const auto p = char_positions("ab cd");
  REQUIRE(p.size() == 5);
  const double progress[] = {0.125, 0.375, 0.5, 0.625, 0.875};
  const double word[] = {0.0, 0.0, 0.0, 0.5, 0.5};
  const double glyph[] = {0.5, 1.5, 2.0, 2.5, 3.5};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK_THAT(p[i].progress, WithinAbs(progress[i], 1e-12));
    CHECK_THAT(p[i].word, WithinAbs(word[i], 1e-12));
    CHECK_THAT(p[i].glyph, WithinAbs(glyph[i], 1e-12));
  }
}

TEST_CASE("layout fields and token count") {
  Fixture f;
  const auto l = two_words();
  const auto fields = layout_fields(l);
  REQUIRE(fields.rows() == 2);
  REQUIRE(fields.cols() == kLayoutFields);
  CHECK_THAT(fields(1, 4), WithinAbs(1.1, 1e-12));
  CHECK_THAT(fields(0, 5), WithinAbs(0.7, 1e-12));
  CHECK_THAT(fields(1, 6), WithinAbs(0.5, 1e-12));
  CHECK(fields(0, 7) == 0.0);
  CHECK_THAT(fields(1, 7), WithinAbs(0.7, 1e-12));
  nn::Tape t(false);
  const auto w = f.enc.encode_layout(t, l);
  CHECK(w.rows() == 2);
  CHECK(w.cols() == 8);
  CHECK_THROWS_AS(f.enc.encode_layout(t, WordLayout{}), LayoutError);
}

TEST_CASE("single style patch gives every character the same attention output") {
  Fixture f;
  nn::Tape t(false);
  const nn::Var E = f.enc.char_embeddings(t, "hello there");
  const nn::Var S = t.constant(random_matrix(1, 6, f.rng));
  const nn::Matrix g = f.enc.text_style_attention(t, E, S).value();
  const auto& a = f.enc.style_attention();
  const nn::Matrix expected = S.value() * a.v.weight->value * a.o.weight->value + a.o.bias->value;
  for (Eigen::Index i = 0; i < g.rows(); ++i) CHECK((g.row(i) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("duplicating style patches leaves the attention output unchanged") {
  Fixture f;
  nn::Tape t(false);
  const nn::Var E = f.enc.char_embeddings(t, "abc d");
  const nn::Matrix s = random_matrix(7, 6, f.rng);
  nn::Matrix dup(14, 6);
  dup << s, s;
  const nn::Matrix g1 = f.enc.text_style_attention(t, E, t.constant(s)).value();
  const nn::Matrix g2 = f.enc.text_style_attention(t, E, t.constant(dup)).value();
  CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse shapes and attention maps") {
  Fixture f;
  nn::Tape t(false);
  const nn::Var ctx = f.enc.style_context(t, "ab cd", t.constant(random_matrix(5, 6, f.rng)));
  const nn::Var strokes = t.constant(random_matrix(13, 8, f.rng));
  const nn::Var layout = f.enc.encode_layout(t, two_words());
  FuseTrace tr;
  const nn::Var out = f.enc.fuse(t, ctx, strokes, layout, &tr);
  CHECK(out.rows() == 13);
  CHECK(out.cols() == 8);
  REQUIRE(tr.beta_probs.size() == 2);
  REQUIRE(tr.delta_probs.size() == 2);
  for (const auto* maps : {&tr.beta_probs, &tr.theta_probs, &tr.delta_probs})
    for (const auto& p : *maps) {
      CHECK(p.rows() == 13);
      CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
      CHECK(p.minCoeff() >= 0.0);
    }
  CHECK(tr.beta_probs[0].cols() == 5);
  CHECK(tr.delta_probs[0].cols() == 2);
  CHECK(((tr.theta.value() + tr.delta.value()) - out.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ablated layout attention makes the output equal theta for any layout") {
  Fixture f;
  f.enc.ablate_layout();
  CHECK(f.enc.layout_ablated());
  nn::Tape t(false);
  const nn::Var ctx = f.enc.style_context(t, "ab cd", t.constant(random_matrix(5, 6, f.rng)));
  const nn::Var strokes = t.constant(random_matrix(9, 8, f.rng));
  FuseTrace tr;
  const nn::Matrix out = f.enc.fuse(t, ctx, strokes, f.enc.encode_layout(t, two_words()), &tr).value();
  CHECK((out - tr.theta.value()).cwiseAbs().maxCoeff() == 0.0);
  auto moved = two_words();
  for (auto& b : moved.boxes) b.bbox = Box{b.bbox.x0 * 2.0, 0.0, b.bbox.x1 * 2.0 + 1.0, 1.0};
  const nn::Matrix out2 = f.enc.fuse(t, ctx, strokes, f.enc.encode_layout(t, moved)).value();
  CHECK(out == out2);
}

TEST_CASE("ablation freezes the layout value weights during training") {
  Fixture f;
  f.enc.ablate_layout();
  nn::Adam adam({.lr = 0.1});
  for (int step = 0; step < 3; ++step) {
    f.store.zero_grad();
    nn::Tape t;
    const nn::Var ctx = f.enc.style_context(t, "ab cd", t.constant(random_matrix(5, 6, f.rng)));
    const nn::Var out = f.enc.fuse(t, ctx, t.constant(random_matrix(9, 8, f.rng)), f.enc.encode_layout(t, two_words()));
    t.backward(nn::sum(nn::square(out)));
    adam.step(f.store);
  }
  CHECK(f.enc.layout_ablated());
}

TEST_CASE("layout features ignore a horizontal shift when x channels are masked") {
  Fixture f;
  f.enc.layout_input().weight->value.row(0).setZero();
  f.enc.layout_input().weight->value.row(2).setZero();
  const auto pf = f.enc.config().pos_features;
  f.enc.layout_position().weight->value.middleRows(pf, 2 * pf).setZero();
  nn::Tape t(false);
  const auto l = two_words();
  auto shifted = l;
  for (auto& b : shifted.boxes) {
    b.bbox.x0 += 0.75;
    b.bbox.x1 += 0.75;
  }
  const nn::Matrix a = f.enc.encode_layout(t, l).value();
  const nn::Matrix b = f.enc.encode_layout(t, shifted).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  auto taller = l;
  taller.boxes[0].bbox.y1 += 0.05;
  CHECK((a - f.enc.encode_layout(t, taller).value()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("text embedding depends on character identity and position") {
  Fixture f;
  nn::Tape t(false);
  const nn::Matrix e = f.enc.char_embeddings(t, "aa").value();
  CHECK((e.row(0) - e.row(1)).cwiseAbs().maxCoeff() > 1e-6);
  const nn::Matrix ab = f.enc.char_embeddings(t, "ab").value();
  CHECK((e.row(0) - ab.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((e.row(1) - ab.row(1)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK_THROWS_AS(f.enc.char_embeddings(t, ""), InvalidArgument);
}

TEST_CASE("input width checks") {
  Fixture f;
  nn::Tape t(false);
  const nn::Var E = f.enc.char_embeddings(t, "ab");
  CHECK_THROWS_AS(f.enc.text_style_attention(t, E, t.constant(nn::Matrix::Zero(3, 5))), InvalidArgument);
  const nn::Var ok = t.constant(nn::Matrix::Zero(3, 8));
  CHECK_THROWS_AS(f.enc.fuse(t, ok, t.constant(nn::Matrix::Zero(3, 7)), ok), InvalidArgument);
  CHECK_THROWS_AS(f.enc.fuse(t, ok, ok, t.constant(nn::Matrix::Zero(0, 8))), LayoutError);
  TextLayoutConfig bad = small_config();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("finite-difference gradients through the text-layout encoder") {
  Fixture f;
  const nn::Matrix style = random_matrix(4, 6, f.rng);
  const nn::Matrix strokes = random_matrix(6, 8, f.rng);
  const nn::Matrix target = random_matrix(6, 8, f.rng);
  std::vector<nn::Parameter*> params;
  for (auto& p : f.store) params.push_back(&p);
  const auto r = testing::check_param_grads(params, [&](nn::Tape& t) {
    const nn::Var ctx = f.enc.style_context(t, "ab c", t.constant(style));
    const nn::Var out = f.enc.fuse(t, ctx, t.constant(strokes), f.enc.encode_layout(t, two_words()));
    return nn::sum(nn::square(out - t.constant(target)));
  });
  INFO(r.worst);
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("layout word features match the characters of the same word") {
  const auto l = two_words();
  const std::string text = l.boxes[0].word + " " + l.boxes[1].word;
  const nn::Matrix lf = layout_position_features(l, 6);
  const auto pos = char_positions(text);
  std::vector<double> word;
  for (const auto& p : pos) word.push_back(p.word);
  const nn::Matrix cf = nn::fourier_features(word, 6, 4.0);
  CHECK((cf.row(0) - lf.row(0).head(6)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cf.row(static_cast<Eigen::Index>(text.size()) - 1) - lf.row(1).head(6)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(lf.cols() == 24);
}

TEST_CASE("glyph words skip spaces") {
  const auto w = glyph_words("AB  CDE F");
  REQUIRE(w.size() == 6);
  const std::vector<double> expect{0.0, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3};
  for (std::size_t i = 0; i < w.size(); ++i) CHECK_THAT(w[i], WithinAbs(expect[i], 1e-12));
}
