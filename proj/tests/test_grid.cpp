#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "support.hpp"
#include "udc/grid.hpp"

using namespace udc;

TEST_CASE("sparse grid keeps depth and validity consistent") {
  SparseDepthGrid s(2, 3);
  CHECK(s.valid_fraction() == 0.0);
  s.set(0, 1, 4.5);
  s.set(1, 2, -1.0);
  CHECK(s.valid(0, 1));
  CHECK(s.depth(0, 1) == 4.5);
  CHECK_FALSE(s.valid(1, 2));
  CHECK(s.depth(1, 2) == 0.0);
  s.clear(1);
  CHECK_FALSE(s.valid(0, 1));
  CHECK(s.depth(0, 1) == 0.0);

  DepthGrid d(1, 3, std::vector<double>{0.0, 2.0, 0.0});
  SparseDepthGrid from(d);
  CHECK(count_valid(from) == 1);
  CHECK(from.valid(0, 1));
  CHECK_THROWS_AS(SparseDepthGrid(DepthGrid(1, 1, std::vector<double>{-1.0})),
                  std::invalid_argument);
  CHECK_THROWS_AS(SparseDepthGrid(DepthGrid(1, 1, std::vector<double>{NAN})),
                  std::invalid_argument);
}

TEST_CASE("downsample_sparse_max takes the max over valid pixels") {
  SparseDepthGrid s(2, 2);
  s.set(0, 0, 1.0);
  s.set(0, 1, 3.0);
  s.set(1, 1, 2.0);
  const SparseDepthGrid out = downsample_sparse_max(s, 2);
  REQUIRE(out.height() == 1);
  REQUIRE(out.width() == 1);
  CHECK(out.valid(0, 0));
  CHECK(out.depth(0, 0) == 3.0);

  const SparseDepthGrid empty = downsample_sparse_max(SparseDepthGrid(4, 4), 2);
  CHECK(count_valid(empty) == 0);
  for (double v : empty.depth().values()) CHECK(v == 0.0);

  for (int f : {1, 2, 4, 8}) {
    const SparseDepthGrid c(DepthGrid(8, 16, 5.0));
    const SparseDepthGrid o = downsample_sparse_max(c, f);
    CHECK(count_valid(o) == o.size());
    for (double v : o.depth().values()) CHECK(v == 5.0);
  }
  CHECK_THROWS_AS(downsample_sparse_max(s, 3), std::invalid_argument);
  CHECK_THROWS_AS(downsample_sparse_max(s, 0), std::invalid_argument);
}

TEST_CASE("downsample_sparse_max never invents values") {
  auto rng = test::rng_for(1);
  for (int trial = 0; trial < 20; ++trial) {
    const SparseDepthGrid s = test::random_sparse(rng, 12, 20, 0.3);
    for (int f : {2, 4}) {
      const SparseDepthGrid o = downsample_sparse_max(s, f);
      CHECK(o.height() == (12 + f - 1) / f);
      CHECK(o.width() == (20 + f - 1) / f);
      for (int r = 0; r < o.height(); ++r) {
        for (int c = 0; c < o.width(); ++c) {
          bool any = false;
          double best = 0.0;
          for (int y = r * f; y < std::min(12, (r + 1) * f); ++y) {
            for (int x = c * f; x < std::min(20, (c + 1) * f); ++x) {
              if (s.valid(y, x)) {
                any = true;
                best = std::max(best, s.depth(y, x));
              }
            }
          }
          CHECK(o.valid(r, c) == any);
          CHECK(o.depth(r, c) == best);
        }
      }
    }
  }
}

TEST_CASE("downsample_guide is an area mean") {
  GuideImage g(2, 2, 1, std::vector<double>{0, 1, 1, 0});
  CHECK(downsample_guide(g, 2).at(0, 0, 0) == doctest::Approx(0.5));

  const GuideImage c(8, 8, 3, 0.3);
  for (int f : {1, 2, 4, 8}) {
    const GuideImage o = downsample_guide(c, f);
    CHECK(o.channels() == 3);
    for (double v : o.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  }

  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i / 15.0;
  const GuideImage r(4, 4, 1, ramp);
  const GuideImage o = downsample_guide(r, 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      const int tl = 2 * y * 4 + 2 * x;
      const double expected = (ramp[tl] + ramp[tl + 1] + ramp[tl + 4] + ramp[tl + 5]) / 4;
      CHECK(o.at(0, y, x) == doctest::Approx(expected).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(downsample_guide(r, 6), std::invalid_argument);
}

TEST_CASE("upsample_bilinear follows the half-pixel convention") {
  const DepthGrid line(1, 2, std::vector<double>{0.0, 1.0});
  const DepthGrid up = upsample_bilinear(line, 2);
  REQUIRE(up.height() == 2);
  REQUIRE(up.width() == 4);
  const double expected[] = {0.0, 0.25, 0.75, 1.0};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(up.at(r, c) == doctest::Approx(expected[c]));
  }

  const DepthGrid seven(3, 5, 7.0);
  for (double v : upsample_bilinear(seven, 4).values()) CHECK(v == doctest::Approx(7.0));
  CHECK(upsample_bilinear(line, 1) == line);
  CHECK_THROWS_AS(upsample_bilinear(line, 3), std::invalid_argument);
}

TEST_CASE("upsample_bilinear stays within the input range") {
  auto rng = test::rng_for(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = test::random_grid<DepthTag>(rng, 5, 7, 0.5, 60.0);
    const auto [lo, hi] = std::minmax_element(g.values().begin(), g.values().end());
    for (int f : {2, 4}) {
      for (double v : upsample_bilinear(g, f).values()) {
        CHECK(v >= *lo - 1e-12);
        CHECK(v <= *hi + 1e-12);
      }
    }
  }
}

TEST_CASE("build_pyramid orders levels coarse to fine") {
  auto rng = test::rng_for(3);
  const GuideImage guide = test::random_guide(rng, 16, 48);
  const SparseDepthGrid sparse = test::random_sparse(rng, 16, 48, 0.1);

  const ScalePyramid one = build_pyramid(guide, sparse, 1);
  REQUIRE(one.size() == 1);
  CHECK(one.finest().guide == guide);
  CHECK(one.finest().sparse == sparse);

  const ScalePyramid four = build_pyramid(guide, sparse, 4);
  REQUIRE(four.size() == 4);
  CHECK(four.finest().guide == guide);
  CHECK(four.finest().sparse == sparse);
  for (int k = 0; k < 4; ++k) {
    CHECK(four.scale(k).sparse.height() == 16 >> k);
    CHECK(four.scale(k).sparse.width() == 48 >> k);
    CHECK(four.scale(k).sparse == downsample_sparse_max(sparse, 1 << k));
    CHECK(four.scale(k).guide == downsample_guide(guide, 1 << k));
  }
  CHECK(&four.coarsest() == &four.scale(3));

  CHECK_THROWS_AS(build_pyramid(guide, sparse, 5), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(guide, sparse, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(GuideImage(12, 20, 1), SparseDepthGrid(12, 20), 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(GuideImage(16, 16, 1), sparse, 1), std::invalid_argument);
}

TEST_CASE("build_pyramid at KITTI resolution") {
  const ScalePyramid p =
      build_pyramid(GuideImage(352, 1216, 1, 0.5), SparseDepthGrid(352, 1216), 4);
  CHECK(p.coarsest().guide.height() == 44);
  CHECK(p.coarsest().guide.width() == 152);
}

TEST_CASE("build_pyramid of constant inputs is constant at every level") {
  const GuideImage g(8, 8, 1, 0.25);
  const SparseDepthGrid s(DepthGrid(8, 8, 3.0));
  const ScalePyramid p = build_pyramid(g, s, 2);
  for (const auto& level : p.levels) {
    for (double v : level.guide.values()) CHECK(v == 0.25);
    for (double v : level.sparse.depth().values()) CHECK(v == 3.0);
  }
}

TEST_CASE("count_valid") {
  CHECK(count_valid(SparseDepthGrid(DepthGrid(4, 4, 1.0))) == 16);
  CHECK(count_valid(SparseDepthGrid(4, 4)) == 0);
  SparseDepthGrid checker(4, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if ((r + c) % 2 == 0) checker.set(r, c, 1.0);
    }
  }
  CHECK(count_valid(checker) == 8);
}
