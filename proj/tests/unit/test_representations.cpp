#include <doctest.h>

#include <cmath>

#include "evlign/error.hpp"
#include "evlign/representations.hpp"
#include "oracles.hpp"

using namespace evlign;

TEST_CASE("frame: single event and empty window") {
  const auto f = build_frame(EventStream({5, 5}, {{7, 2, 3, 1}}));
  CHECK(f.grid.channels == 2);
  CHECK(f.grid.at(0, 3, 2) == 1);
  CHECK(f.total() == 1);
  const auto empty = build_frame(EventStream({5, 5}, {}));
  CHECK(empty.total() == 0);
}

TEST_CASE("frame channels match brute-force counts") {
  EventStream s({4, 4}, {{1, 0, 0, 1}, {2, 0, 0, -1}, {3, 1, 2, 1}, {4, 0, 0, 1}, {5, 3, 3, -1}});
  const auto f = build_frame(s);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) CHECK(f.grid.at(c, y, x) == oracle::frame_count(s, c, y, x));
    }
  }
}

TEST_CASE("voxel: t* = 1.5 with three bins splits evenly") {
  // first and last events pin the span to [0, 100]; t = 75 maps to 1.5
  EventStream s({3, 1}, {{0, 0, 0, 1}, {75, 1, 0, 1}, {100, 2, 0, 1}});
  const auto v = build_voxel(s, 3);
  CHECK(v.grid.at(0, 0, 1) == 0.0);
  CHECK(v.grid.at(1, 0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v.grid.at(2, 0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v.grid.at(0, 0, 0) == 1.0);
  CHECK(v.grid.at(2, 0, 2) == 1.0);
}

TEST_CASE("voxel: shared timestamp puts all mass in bin 0") {
  EventStream s({3, 3}, {{9, 0, 0, 1}, {9, 1, 1, -1}, {9, 2, 2, 1}});
  const auto v = build_voxel(s, 4);
  double rest = 0.0;
  for (std::size_t b = 1; b < 4; ++b) {
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 3; ++x) rest += std::abs(v.grid.at(b, y, x));
    }
  }
  CHECK(rest == 0.0);
  CHECK(v.grid.at(0, 1, 1) == -1.0);
  CHECK_THROWS_AS(build_voxel(s, 0), ParameterError);
}

TEST_CASE("voxel matches dense kernel oracle and conserves mass") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = oracle::random_stream(rng, 12, 200);
    const std::size_t bins = 1 + rng.below(7);
    const auto v = build_voxel(s, bins);
    const auto ref = oracle::voxel_dense(s, bins);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - v.grid.values[i]));
    CHECK(worst <= 1e-12);
    CHECK(std::abs(v.total() - oracle::polarity_sum(s)) <= 1e-9 * static_cast<double>(std::max<std::size_t>(s.size(), 1)));
    CHECK(build_frame(s).total() == s.size());
  }
}

TEST_CASE("time surface: closed-form values") {
  EventStream s({4, 1}, {{100, 0, 0, 1}, {200, 1, 0, -1}, {300, 2, 0, 1}});
  const auto ts = build_timesurface(s, 300, 100.0);
  CHECK(ts.grid.at(0, 0, 2) == 1.0);
  CHECK(std::abs(ts.grid.at(1, 0, 1) - std::exp(-1.0)) <= 1e-12);
  CHECK(std::abs(ts.grid.at(0, 0, 0) - std::exp(-2.0)) <= 1e-12);
  CHECK(ts.grid.at(0, 0, 3) == 0.0);
  CHECK(ts.grid.at(1, 0, 0) == 0.0);
  CHECK_THROWS_AS(build_timesurface(s, 299, 100.0), ParameterError);
  CHECK_THROWS_AS(build_timesurface(s, 300, 0.0), ParameterError);
}

TEST_CASE("time surface keeps the latest event and decays with t_ref") {
  EventStream s({1, 1}, {{10, 0, 0, 1}, {50, 0, 0, 1}});
  CHECK(build_timesurface(s, 50, 10.0).grid.at(0, 0, 0) == 1.0);
  double prev = 2.0;
  for (std::uint64_t t_ref = 50; t_ref < 200; t_ref += 7) {
    const double v = build_timesurface(s, t_ref, 30.0).grid.at(0, 0, 0);
    CHECK(v < prev);
    CHECK(v > 0.0);
    prev = v;
  }
}

TEST_CASE("time surface entries stay in [0, 1] on random windows") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_stream(rng, 10, 100);
    if (s.empty()) continue;
    const auto ts = build_timesurface(s);
    for (double v : ts.grid.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("builders are deterministic and normalize is explicit") {
  Rng rng(2);
  const auto s = oracle::random_stream(rng, 20, 2000);
  CHECK(build_voxel(s).grid == build_voxel(s).grid);
  CHECK(build_timesurface(s).grid == build_timesurface(s).grid);
  const auto n = normalize(build_voxel(s).grid);
  double m = 0.0;
  for (double v : n.values) m = std::max(m, std::abs(v));
  CHECK((s.empty() ? m == 0.0 : m == 1.0));
  const auto z = normalize(Grid<double>(1, 2, 2));
  for (double v : z.values) CHECK(v == 0.0);
}

TEST_CASE("tensor shape follows the grid") {
  EventStream s({6, 4}, {{0, 1, 1, 1}, {10, 2, 2, -1}});
  const auto t = to_tensor(build_voxel(s, 5));
  CHECK(t.shape == std::vector<std::uint64_t>{5, 4, 6});
  CHECK(t.data.size() == 5 * 4 * 6);
  CHECK(to_tensor(build_frame(s)).shape == std::vector<std::uint64_t>{2, 4, 6});
}
