#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "evlign/dataset_tools.hpp"
#include "evlign/error.hpp"
#include "oracles.hpp"

using namespace evlign;

namespace {

WindowIndex index_of(std::vector<std::size_t> counts) {
  WindowIndex idx;
  for (std::size_t i = 0; i < counts.size(); ++i) idx.windows.push_back({i * 40'000, 40'000});
  idx.counts = std::move(counts);
  return idx;
}

/// One event every `step` us over [t0, t0 + duration].
EventStream uniform_stream(std::uint64_t t0, std::uint64_t duration, std::uint64_t step) {
  std::vector<Event> evs;
  for (std::uint64_t t = t0; t <= t0 + duration; t += step) evs.push_back({t, 0, 0, 1});
  if (evs.back().t != t0 + duration) evs.push_back({t0 + duration, 0, 0, 1});
  return EventStream({4, 4}, std::move(evs));
}

}  // namespace

TEST_CASE("segment_stream: 100 ms at 25 fps") {
  const auto idx = segment_stream(uniform_stream(0, 100'000, 1'000), 25.0);
  REQUIRE(idx.size() == 3);
  CHECK(idx.windows[0] == Window{0, 40'000});
  CHECK(idx.windows[1] == Window{40'000, 40'000});
  CHECK(idx.windows[2].t0 == 80'000);
  CHECK(idx.windows[2].dt <= 40'000);
  CHECK(std::accumulate(idx.counts.begin(), idx.counts.end(), std::size_t{0}) == 101);
  CHECK(segment_stream(EventStream(), 25.0).empty());
  CHECK_THROWS_AS(segment_stream(uniform_stream(0, 10, 1), 0.0), ParameterError);
}

TEST_CASE("segment_stream partitions random streams") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_stream(rng, 8, 400, 2'000);
    if (s.empty()) continue;
    const double fps = rng.uniform(5.0, 200.0);
    const auto idx = segment_stream(s, fps);
    std::size_t total = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      CHECK(idx.counts[i] == count_events(slice_window(s, idx.windows[i].t0, idx.windows[i].dt)));
      if (i > 0) CHECK(idx.windows[i].t0 == idx.windows[i - 1].t0 + idx.windows[i - 1].dt);
      total += idx.counts[i];
    }
    CHECK(total == s.size());
    CHECK(idx.windows.front().t0 == s.first_t());
  }
}

TEST_CASE("select_max_event_segment examples") {
  CHECK(select_max_event_segment(index_of({3, 9, 9, 1})) == 1);
  CHECK(select_max_event_segment(index_of({7})) == 0);
  CHECK_THROWS_AS(select_max_event_segment(WindowIndex{}), ParameterError);
}

TEST_CASE("select_top_k_segments examples") {
  CHECK(select_top_k_segments(index_of({5, 2, 8, 8}), 2) == std::vector<std::size_t>{2, 3});
  CHECK(select_top_k_segments(index_of({1, 2}), 5) == std::vector<std::size_t>{1, 0});
  CHECK_THROWS_AS(select_top_k_segments(index_of({1}), 0), ParameterError);
}

TEST_CASE("selection matches scan and sort oracles") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    auto idx = index_of({});
    const std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      idx.windows.push_back({i * 40'000, 40'000});
      idx.counts.push_back(rng.below(6));
    }
    std::size_t best = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (idx.counts[i] > idx.counts[best]) best = i;
    }
    CHECK(select_max_event_segment(idx) == best);

    std::vector<std::pair<long, std::size_t>> keyed;
    for (std::size_t i = 0; i < n; ++i) keyed.push_back({-static_cast<long>(idx.counts[i]), i});
    std::sort(keyed.begin(), keyed.end());
    const std::size_t k = 1 + rng.below(n + 3);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < std::min(k, n); ++i) expect.push_back(keyed[i].second);
    CHECK(select_top_k_segments(idx, k) == expect);
  }
}

TEST_CASE("selection is invariant under time translation") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::random_stream(rng, 8, 500, 3'000);
    if (s.empty()) continue;
    const std::uint64_t shift = rng.below(5'000'000);
    std::vector<Event> moved(s.events().begin(), s.events().end());
    for (auto& e : moved) e.t += shift;
    const auto a = segment_stream(s, 25.0);
    const auto b = segment_stream(EventStream(s.geometry(), moved), 25.0);
    CHECK(a.counts == b.counts);
    CHECK(select_max_event_segment(a) == select_max_event_segment(b));
    CHECK(select_top_k_segments(a, 3) == select_top_k_segments(b, 3));
  }
}

TEST_CASE("esie windows for a 10.4 s recording") {
  const std::uint64_t origin = 123'456;
  const auto s = uniform_stream(origin, 10'400'000, 10'000);
  const auto w = esie_windows(s);
  // halves of 5.2 s, 5 s interval centred 0.1 s into each
  const std::uint64_t starts[] = {100'000, 1'100'000, 2'100'000, 3'100'000, 4'100'000,
                                  5'300'000, 6'300'000, 7'300'000, 8'300'000, 9'300'000};
  REQUIRE(w.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(w[i].t0 == origin + starts[i]);
    CHECK(w[i].dt == 40'000);
  }
  const auto slices = esie_protocol(s);
  REQUIRE(slices.size() == 10);
  for (const auto& sl : slices) CHECK(sl.size() == 4);
}

TEST_CASE("esie edge durations") {
  const auto w = esie_windows(uniform_stream(0, 10'000'000, 50'000));
  REQUIRE(w.size() == 10);
  CHECK(w[0].t0 == 0);
  CHECK(w[5].t0 == 5'000'000);
  CHECK_THROWS_AS(esie_windows(uniform_stream(0, 9'000'000, 50'000)), ProtocolError);
  CHECK_THROWS_AS(esie_windows(EventStream()), ProtocolError);
}

TEST_CASE("manifest json round trip") {
  const auto idx = index_of({4, 9, 1});
  const auto m = make_manifest(idx, {1, 0}, "events.bin", 25.0);
  const auto back = manifest_from_json(manifest_to_json(m));
  CHECK(back.events_path == "events.bin");
  REQUIRE(back.windows.size() == 2);
  CHECK(back.windows[0].id == 1);
  CHECK(back.windows[0].window == Window{40'000, 40'000});
  CHECK(back.windows[0].count == 9);
  CHECK_THROWS_AS(manifest_from_json("{"), ParseError);
  CHECK_THROWS_AS(make_manifest(idx, {3}, "x", 25.0), ParameterError);
}
