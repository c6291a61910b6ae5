#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "strokegen/random.hpp"
#include "strokegen/raster.hpp"
#include "strokegen/stroke.hpp"

using namespace strokegen;
using Catch::Matchers::WithinAbs;

namespace {

StrokeSequence random_sequence(Rng& rng, std::size_t n) {
  std::vector<StrokePoint> pts;
  for (std::size_t i = 0; i < n; ++i)
    pts.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), static_cast<std::uint8_t>(rng.below(2))});
  pts.front().pen = kPenDown;
  return StrokeSequence(pts);
}

}  // namespace

TEST_CASE("offsets_to_absolute accumulates offsets") {
  auto z = offsets_to_absolute(StrokeSequence({{0, 0, 0}}), {0, 0});
  REQUIRE(z.size() == 1);
  CHECK(z[0].x == 0.0);
  CHECK(z[0].y == 0.0);
  CHECK(z[0].pen == 0);

  auto a = offsets_to_absolute(StrokeSequence({{1, 0, 0}, {1, 0, 0}, {0, 1, 1}}), {0, 0});
  REQUIRE(a.size() == 3);
  CHECK((a[0].x == 1 && a[0].y == 0 && a[0].pen == 0));
  CHECK((a[1].x == 2 && a[1].y == 0 && a[1].pen == 0));
  CHECK((a[2].x == 2 && a[2].y == 1 && a[2].pen == 1));

  auto o = offsets_to_absolute(StrokeSequence({{1, 2, 0}}), {10, 20});
  CHECK((o[0].x == 11 && o[0].y == 22));
}

TEST_CASE("non-finite offsets are rejected") {
  CHECK_THROWS_AS(StrokeSequence({{NAN, 0, 0}}), InvalidStroke);
  CHECK_THROWS_AS(StrokeSequence({{0, INFINITY, 0}}), InvalidStroke);
  CHECK_THROWS_AS(StrokeSequence({{0, 0, 2}}), InvalidStroke);
  CHECK_THROWS_AS(StrokeSequence(std::vector<StrokePoint>{}), InvalidStroke);
}

TEST_CASE("absolute_to_offsets differences points") {
  std::vector<AbsolutePoint> one{{0, 0, 0}};
  CHECK(absolute_to_offsets(one) == StrokeSequence({{0, 0, 0}}));
  std::vector<AbsolutePoint> two{{2, 3, 0}, {5, 3, 1}};
  CHECK(absolute_to_offsets(two) == StrokeSequence({{2, 3, 0}, {3, 0, 1}}));
  CHECK_THROWS_AS(absolute_to_offsets(std::vector<AbsolutePoint>{}), InvalidStroke);
}

TEST_CASE("offset and absolute conversions are inverse") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_sequence(rng, 1 + rng.below(40));
    const Point2 origin{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto back = absolute_to_offsets(offsets_to_absolute(s, origin), origin);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK_THAT(back[i].dx, WithinAbs(s[i].dx, 1e-9));
      CHECK_THAT(back[i].dy, WithinAbs(s[i].dy, 1e-9));
      CHECK(back[i].pen == s[i].pen);
    }
    std::vector<AbsolutePoint> abs;
    for (std::size_t i = 0; i < s.size(); ++i) abs.push_back({rng.uniform(-9, 9), rng.uniform(-9, 9), s[i].pen});
    const auto again = offsets_to_absolute(absolute_to_offsets(abs));
    for (std::size_t i = 0; i < abs.size(); ++i) {
      CHECK_THAT(again[i].x, WithinAbs(abs[i].x, 1e-9));
      CHECK_THAT(again[i].y, WithinAbs(abs[i].y, 1e-9));
    }
  }
}

TEST_CASE("normalize fixes unit height at the origin") {
  const StrokeSequence unit({{0, 0, 0}, {2, 1, 1}});
  const auto n = normalize(unit);
  for (std::size_t i = 0; i < unit.size(); ++i) {
    CHECK_THAT(n[i].dx, WithinAbs(unit[i].dx, 1e-12));
    CHECK_THAT(n[i].dy, WithinAbs(unit[i].dy, 1e-12));
  }

  const StrokeSequence tall({{0, 0, 0}, {1, 2, 0}, {3, -1, 1}});
  const auto h = normalize(tall);
  for (std::size_t i = 0; i < tall.size(); ++i) {
    CHECK_THAT(h[i].dx, WithinAbs(0.5 * tall[i].dx, 1e-12));
    CHECK_THAT(h[i].dy, WithinAbs(0.5 * tall[i].dy, 1e-12));
  }

  CHECK_THROWS_AS(normalize(StrokeSequence({{1, 1, 1}})), DegenerateStroke);
  CHECK_THROWS_AS(normalize(StrokeSequence({{0, 0, 0}, {5, 0, 1}})), DegenerateStroke);
}

TEST_CASE("normalize is idempotent and scale invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_sequence(rng, 2 + rng.below(30));
    const auto n = normalize(s);
    const auto abs = offsets_to_absolute(n);
    const Box b = ink_box(std::span<const AbsolutePoint>(abs));
    CHECK_THAT(b.height(), WithinAbs(1.0, 1e-9));
    CHECK_THAT(b.x0, WithinAbs(0.0, 1e-9));
    CHECK_THAT(b.y0, WithinAbs(0.0, 1e-9));
    const auto nn = normalize(n);
    const auto nc = normalize(scaled(s, rng.uniform(0.1, 10)));
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK_THAT(nn[i].dx, WithinAbs(n[i].dx, 1e-9));
      CHECK_THAT(nn[i].dy, WithinAbs(n[i].dy, 1e-9));
      CHECK_THAT(nc[i].dx, WithinAbs(n[i].dx, 1e-9));
      CHECK_THAT(nc[i].dy, WithinAbs(n[i].dy, 1e-9));
      CHECK(n[i].pen == s[i].pen);
      CHECK(nc[i].pen == s[i].pen);
    }
  }
}

TEST_CASE("render of a pen-up point is blank") {
  const auto img = render(StrokeSequence({{0.5, 0.5, 1}}), 16, 16, 2.0);
  for (double v : img.pixels) CHECK(v == 1.0);
}

TEST_CASE("render draws a horizontal segment on the expected row") {
  // 16 px canvas: margin 2, scale 12. y = 0.5 maps to pixel y = 8, i.e. the
  // boundary between rows 7 and 8. Width 1 covers both rows by half.
  const StrokeSequence seq({{0.25, 0.5, 0}, {0.5, 0.0, 1}});
  const auto img = render(seq, 16, 16, 1.0);
  // x from 2 + 3 = 5 to 2 + 9 = 11.
  for (int c = 6; c <= 9; ++c) {
    CHECK_THAT(img.at(7, c), WithinAbs(0.5, 1e-12));
    CHECK_THAT(img.at(8, c), WithinAbs(0.5, 1e-12));
    CHECK(img.at(5, c) == 1.0);
    CHECK(img.at(10, c) == 1.0);
  }
  for (int r = 0; r < 16; ++r) CHECK(img.at(r, 0) == 1.0);

  const StrokeSequence centred({{0.25, 0.5 + 0.5 / 12.0, 0}, {0.5, 0.0, 1}});
  const auto row = render(centred, 16, 16, 2.0);
  for (int c = 6; c <= 9; ++c) {
    CHECK(row.at(8, c) == 0.0);
    CHECK_THAT(row.at(7, c), WithinAbs(0.5, 1e-12));
    CHECK_THAT(row.at(9, c), WithinAbs(0.5, 1e-12));
  }
}

TEST_CASE("pen lift suppresses the joining segment") {
  const StrokeSequence seq({{0.1, 0.5, 1}, {0.8, 0.0, 1}});
  const auto img = render(seq, 16, 16, 2.0);
  for (double v : img.pixels) CHECK(v == 1.0);
}

TEST_CASE("render is deterministic and validates dimensions") {
  Rng rng(3);
  const auto s = normalize(random_sequence(rng, 50));
  const auto a = render(s, 32, 256, 1.0);
  const auto b = render(s, 32, 256, 1.0);
  CHECK(a == b);
  a.validate();
  CHECK_THROWS_AS(render(s, 0, 10, 1.0), InvalidArgument);
  CHECK_THROWS_AS(render(s, 10, -1, 1.0), InvalidArgument);
}

TEST_CASE("pgm round trip") {
  Rng rng(9);
  const auto img = render(normalize(random_sequence(rng, 20)), 16, 64, 1.0);
  const auto path = std::string("test_roundtrip.pgm");
  write_pgm(img, path);
  const auto back = read_pgm(path);
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) CHECK_THAT(back.pixels[i], WithinAbs(img.pixels[i], 0.5 / 255 + 1e-12));
  std::remove(path.c_str());
}
