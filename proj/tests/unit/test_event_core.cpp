#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "evlign/error.hpp"
#include "evlign/event_core.hpp"
#include "oracles.hpp"

using namespace evlign;

namespace {

EventStream stream_at(std::initializer_list<std::uint64_t> ts) {
  std::vector<Event> evs;
  for (auto t : ts) evs.push_back({t, 1, 1, 1});
  return EventStream({8, 8}, evs);
}

}  // namespace

TEST_CASE("csv rows map to events with signed polarity") {
  std::istringstream in("t_us,x,y,p\n100,5,7,1\n200,5,7,0\n");
  const auto s = read_events_csv(in, {});
  REQUIRE(s.size() == 2);
  CHECK(s[0] == Event{100, 5, 7, 1});
  CHECK(s[1] == Event{200, 5, 7, -1});
  CHECK_FALSE(s.was_resorted());
}

TEST_CASE("header-only csv is an empty stream") {
  std::istringstream in("t_us,x,y,p\n");
  CHECK(read_events_csv(in, {}).empty());
}

TEST_CASE("x equal to width is rejected at index 0") {
  std::istringstream in("t_us,x,y,p\n10,346,0,1\n");
  try {
    read_events_csv(in, {346, 260});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("event 0") != std::string::npos);
  }
}

TEST_CASE("malformed csv names the line") {
  std::istringstream in("t_us,x,y,p\n1,2,3,1\n5,oops,3,1\n");
  try {
    read_events_csv(in, {});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream bad_p("t_us,x,y,p\n1,2,3,2\n");
  CHECK_THROWS_AS(read_events_csv(bad_p, {}), ParseError);
}

TEST_CASE("truncated binary names the offset") {
  std::ostringstream out;
  write_events_bin(out, stream_at({1, 2, 3}));
  std::string bytes = out.str();
  bytes.resize(bytes.size() - 4);
  std::istringstream in(bytes);
  try {
    read_events_bin(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  std::istringstream wrong_magic("EVS2xxxxxxxxxxxxxxxx");
  CHECK_THROWS_AS(read_events_bin(wrong_magic), ParseError);
}

TEST_CASE("binary layout is little-endian packed records") {
  std::ostringstream out;
  write_events_bin(out, EventStream({3, 2}, {{0x0102030405060708ULL, 2, 1, -1}}));
  const std::string b = out.str();
  REQUIRE(b.size() == 4 + 4 + 4 + 8 + 13);
  CHECK(b.substr(0, 4) == "EVS1");
  CHECK(static_cast<unsigned char>(b[4]) == 3);
  CHECK(static_cast<unsigned char>(b[8]) == 2);
  CHECK(static_cast<unsigned char>(b[12]) == 1);
  CHECK(static_cast<unsigned char>(b[20]) == 0x08);
  CHECK(static_cast<unsigned char>(b[27]) == 0x01);
  CHECK(static_cast<unsigned char>(b[28]) == 2);
  CHECK(static_cast<unsigned char>(b[30]) == 1);
  CHECK(static_cast<unsigned char>(b[32]) == 0);
}

TEST_CASE("unsorted input is stably sorted and flagged") {
  EventStream s({8, 8}, {{30, 0, 0, 1}, {10, 1, 0, 1}, {10, 2, 0, -1}});
  CHECK(s.was_resorted());
  CHECK(s[0] == Event{10, 1, 0, 1});
  CHECK(s[1] == Event{10, 2, 0, -1});
  CHECK(s[2].t == 30);
}

TEST_CASE("bad polarity and empty geometry are rejected") {
  CHECK_THROWS_AS(EventStream({8, 8}, {{0, 0, 0, 0}}), ValidationError);
  CHECK_THROWS_AS(EventStream({0, 8}, {}), ValidationError);
  CHECK_THROWS_AS(EventStream({8, 8}, {{0, -1, 0, 1}}), ValidationError);
}

TEST_CASE("slice_window is half-open") {
  const auto s = stream_at({10, 40, 70});
  const auto w = slice_window(s, 0, 50);
  REQUIRE(w.size() == 2);
  CHECK(w[0].t == 10);
  CHECK(w[1].t == 40);
  CHECK(slice_window(s, 71, 100).empty());
  CHECK(slice_window(stream_at({50}), 50, 1).size() == 1);
  CHECK_THROWS_AS(slice_window(s, 0, 0), ParameterError);
}

TEST_CASE("count_events and concatenate") {
  CHECK(count_events(EventStream()) == 0);
  CHECK(count_events(stream_at({1, 2, 3})) == 3);
  const auto a = stream_at({1, 5, 9});
  const auto b = stream_at({2, 5});
  const auto c = concatenate(a, b);
  CHECK(count_events(c) == count_events(a) + count_events(b));
  for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i - 1].t <= c[i].t);
  CHECK_THROWS_AS(concatenate(a, EventStream({9, 9}, {})), ValidationError);
}

TEST_CASE("random slices: idempotent and additive over partitions") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_stream(rng, 16, 300, 50);
    const std::uint64_t t0 = rng.below(12'000);
    const std::uint64_t dt = 1 + rng.below(2'000);
    const std::size_t parts = 1 + rng.below(6);
    const auto once = slice_window(s, t0, dt * parts);
    CHECK(slice_window(once, t0, dt * parts) == once);
    std::size_t sum = 0;
    for (std::size_t p = 0; p < parts; ++p) sum += count_events(slice_window(s, t0 + p * dt, dt));
    CHECK(sum == count_events(once));
    std::size_t naive = 0;
    for (const auto& e : s.events()) naive += (e.t >= t0 && e.t < t0 + dt * parts) ? 1 : 0;
    CHECK(naive == once.size());
  }
}

TEST_CASE("load, save, load round-trips in both formats") {
  Rng rng(5);
  const auto dir = std::filesystem::temp_directory_path() / "evlign_test_event_core";
  std::filesystem::create_directories(dir);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = oracle::random_stream(rng, 40, 500);
    for (auto fmt : {EventFormat::csv, EventFormat::bin}) {
      const auto path = dir / (fmt == EventFormat::csv ? "a.csv" : "a.bin");
      save_events(path, s, fmt);
      CHECK(format_for(path) == fmt);
      const auto back = load_events(path, fmt, s.geometry());
      CHECK(back == s);
      save_events(dir / "b", back, fmt);
      std::ifstream f1(path, std::ios::binary), f2(dir / "b", std::ios::binary);
      std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
      CHECK(b1 == b2);
    }
  }
  std::filesystem::remove_all(dir);
}
