#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mvsr/hypotheses.hpp"

using namespace mvsr;

namespace {

PseudoDisparityMap affine_map(int w, int h, double a, double b, double c) {
  PseudoDisparityMap m;
  m.values = Image2D<double>(w, h);
  m.scale_fb = 30.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.values.at(x, y) = a + b * x + c * y;
  return m;
}

}  // namespace

TEST_CASE("make_offsets row-major layout with trailing center") {
  OffsetSet one = make_offsets({1});
  REQUIRE(one.size() == 9);
  const Offset expect[9] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0},
                            {-1, 1},  {0, 1},  {1, 1},  {0, 0}};
  for (int i = 0; i < 9; ++i) {
    CHECK(one.offsets[i].dx == expect[i].dx);
    CHECK(one.offsets[i].dy == expect[i].dy);
  }

  OffsetSet both = make_offsets({1, 3});
  REQUIRE(both.size() == 17);
  for (int i = 0; i < 8; ++i) {
    CHECK(both.offsets[8 + i].dx == 3 * expect[i].dx);
    CHECK(both.offsets[8 + i].dy == 3 * expect[i].dy);
  }
  CHECK(both.offsets[16].dx == 0);
  CHECK(both.offsets[16].dy == 0);
}

TEST_CASE("make_offsets input validation") {
  CHECK_THROWS_AS(make_offsets({}), Error);
  CHECK_THROWS_AS(make_offsets({0}), Error);
  CHECK_THROWS_AS(make_offsets({-2}), Error);
  CHECK_THROWS_AS(make_offsets({1, 1}), Error);
}

TEST_CASE("depth_gradient is exact on affine maps") {
  PseudoDisparityMap m = affine_map(9, 7, 5.0, 0.25, -0.4);
  DepthGradient g = depth_gradient(m);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      CHECK(g.dx.at(x, y) == doctest::Approx(0.25).epsilon(1e-12));
      CHECK(g.dy.at(x, y) == doctest::Approx(-0.4).epsilon(1e-12));
    }
}

TEST_CASE("depth_gradient degrades to one-sided next to holes") {
  PseudoDisparityMap m = affine_map(5, 5, 1.0, 1.0, 10.0);
  m.values.at(2, 2) = kInvalid;
  DepthGradient g = depth_gradient(m);
  // (1,2): right neighbor invalid, falls back to (v(1)-v(0))/1.
  CHECK(g.dx.at(1, 2) == doctest::Approx(1.0));
  // (3,2): left neighbor invalid, (v(4)-v(3))/1.
  CHECK(g.dx.at(3, 2) == doctest::Approx(1.0));
  // (2,2) itself still has two valid horizontal neighbors.
  CHECK(g.dx.at(2, 2) == doctest::Approx(1.0));
  CHECK(g.dy.at(2, 1) == doctest::Approx(10.0));

  PseudoDisparityMap dead = affine_map(3, 3, 1.0, 1.0, 1.0);
  for (int x = 0; x < 3; ++x) dead.values.at(x, 1) = kInvalid;
  DepthGradient gd = depth_gradient(dead);
  CHECK(gd.dx.at(1, 1) == 0.0);

  PseudoDisparityMap tiny = affine_map(2, 2, 0, 1, 1);
  (void)tiny;
  CHECK_THROWS_AS(depth_gradient(tiny), Error);
}

TEST_CASE("initial_set perturbs j-shifted copies of the estimate") {
  PseudoDisparityMap m = affine_map(6, 4, 8.0, 0.1, 0.2);
  Rng rng(77);
  HypothesisSet set = initial_set(m, 2, rng);
  CHECK(set.k == 5);
  CHECK(set.width == 6);
  CHECK(set.scale_fb == doctest::Approx(30.0));
  REQUIRE(set.provenance.size() == 5);
  for (Provenance p : set.provenance) CHECK(p == Provenance::kInitial);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      const double c = m.values.at(x, y);
      for (int j = -2; j <= 2; ++j) {
        const double v = set.at(x, y, j + 2);
        CHECK(std::abs(v - (c + j)) <= 0.5 + 1e-12);
      }
      CHECK(set.fallback[y * 6 + x] == 0);
    }
}

TEST_CASE("initial_set carries the last valid estimate in scan order") {
  PseudoDisparityMap m = affine_map(4, 3, 10.0, 1.0, 4.0);
  m.values.at(0, 0) = kInvalid;   // before any valid pixel
  m.values.at(2, 1) = kInvalid;   // mid-scan hole
  Rng rng(3);
  HypothesisSet set = initial_set(m, 1, rng);
  // (0,0) borrows the first valid estimate, which lives at (1,0).
  CHECK(std::abs(set.at(0, 0, 1) - m.values.at(1, 0)) <= 0.5 + 1e-12);
  CHECK(set.fallback[0] == 1);
  // (2,1) borrows its scan predecessor (1,1).
  CHECK(std::abs(set.at(2, 1, 1) - m.values.at(1, 1)) <= 0.5 + 1e-12);
  CHECK(set.fallback[1 * 4 + 2] == 1);
  CHECK(set.fallback[1 * 4 + 1] == 0);
}

TEST_CASE("initial_set rng stream does not depend on hole placement") {
  PseudoDisparityMap a = affine_map(5, 5, 6.0, 0.3, 0.1);
  PseudoDisparityMap b = a;
  b.values.at(2, 2) = kInvalid;
  Rng ra(42), rb(42);
  HypothesisSet sa = initial_set(a, 2, ra);
  HypothesisSet sb = initial_set(b, 2, rb);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      if (x == 2 && y == 2) continue;
      for (int i = 0; i < 5; ++i)
        CHECK(sa.at(x, y, i) == doctest::Approx(sb.at(x, y, i)).epsilon(0));
    }
}

TEST_CASE("propagate reproduces affine fields exactly in the interior") {
  PseudoDisparityMap m = affine_map(16, 12, 7.0, 0.35, -0.15);
  DepthGradient g = depth_gradient(m);
  OffsetSet offs = make_offsets({1, 3});
  HypothesisSet set = propagate(m, g, offs);
  REQUIRE(set.k == 17);
  for (int y = 3; y < 9; ++y)
    for (int x = 3; x < 13; ++x)
      for (int i = 0; i < 17; ++i)
        CHECK(std::abs(set.at(x, y, i) - m.values.at(x, y)) < 1e-9);
}

TEST_CASE("propagate provenance tags and center slot") {
  PseudoDisparityMap m = affine_map(6, 6, 3.0, 0.0, 0.0);
  m.values.at(2, 2) = 99.0;
  DepthGradient g = depth_gradient(m);
  OffsetSet offs = make_offsets({1});
  HypothesisSet set = propagate(m, g, offs);
  for (int i = 0; i < 8; ++i) CHECK(set.provenance[i] == Provenance::kSpatial);
  CHECK(set.provenance[8] == Provenance::kPrevious);
  CHECK(set.at(2, 2, 8) == doctest::Approx(99.0));
}

TEST_CASE("propagate clamps at the border and reads the clamped gradient") {
  PseudoDisparityMap m = affine_map(8, 8, 2.0, 0.5, 0.25);
  DepthGradient g = depth_gradient(m);
  OffsetSet offs = make_offsets({1});
  HypothesisSet set = propagate(m, g, offs);
  // Offset (-1,-1) at (0,0) clamps to (0,0); the extrapolation still walks
  // back along the offset: v(0,0) + dx + dy.
  CHECK(set.at(0, 0, 0) ==
        doctest::Approx(m.values.at(0, 0) + 0.5 + 0.25).epsilon(1e-12));
}

TEST_CASE("propagate falls back to the pixel's own value at holes") {
  PseudoDisparityMap m = affine_map(7, 7, 4.0, 0.2, 0.1);
  m.values.at(3, 3) = kInvalid;
  DepthGradient g = depth_gradient(m);
  OffsetSet offs = make_offsets({1});
  HypothesisSet set = propagate(m, g, offs);
  // (2,3) with offset (1,0) points into the hole: keeps its own estimate.
  CHECK(set.at(2, 3, 4) == doctest::Approx(m.values.at(2, 3)));
  CHECK(set.fallback[3 * 7 + 2] == 0);
  // The hole's own center candidate is invalid, forced to zero and flagged.
  CHECK(set.at(3, 3, 8) == 0.0);
  CHECK(set.fallback[3 * 7 + 3] == 1);
}
