#include "evlign/dataset_tools.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "evlign/error.hpp"

namespace evlign {

WindowIndex segment_stream(const EventStream& stream, double fps) {
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ParameterError("segment_stream: fps must be positive");
  WindowIndex index;
  if (stream.empty()) return index;

  const double period = 1e6 / fps;
  const std::uint64_t first = stream.first_t();
  const std::uint64_t last = stream.last_t();
  auto boundary = [&](std::uint64_t i) {
    return first + static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * period));
  };
  auto evs = stream.events();
  auto it = evs.begin();
  for (std::uint64_t i = 0;; ++i) {
    const std::uint64_t t0 = boundary(i);
    if (t0 > last) break;
    const std::uint64_t t1 = std::min(boundary(i + 1), last + 1);
    auto end = std::lower_bound(it, evs.end(), t1,
                                [](const Event& e, std::uint64_t t) { return e.t < t; });
    index.windows.push_back({t0, t1 - t0});
    index.counts.push_back(static_cast<std::size_t>(end - it));
    it = end;
  }
  return index;
}

std::size_t select_max_event_segment(const WindowIndex& index) {
  if (index.empty()) throw ParameterError("select_max_event_segment: empty window index");
  std::size_t best = 0;
  for (std::size_t i = 1; i < index.size(); ++i) {
    if (index.counts[i] > index.counts[best] ||
        (index.counts[i] == index.counts[best] && index.windows[i].t0 < index.windows[best].t0)) {
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> select_top_k_segments(const WindowIndex& index, std::size_t k) {
  if (k == 0) throw ParameterError("select_top_k_segments: k must be at least 1");
  std::vector<std::size_t> ids(index.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (index.counts[a] != index.counts[b]) return index.counts[a] > index.counts[b];
    return index.windows[a].t0 < index.windows[b].t0;
  });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

std::vector<Window> esie_windows(const EventStream& stream) {
  const std::uint64_t duration = stream.empty() ? 0 : stream.last_t() - stream.first_t();
  if (duration < kEsieMinDuration) {
    throw ProtocolError("E-SIE protocol needs at least 10 s of events, got " +
                        std::to_string(duration) + " us");
  }
  const double half = static_cast<double>(duration) / 2.0;
  const double margin = (half - static_cast<double>(kEsieInterval)) / 2.0;
  std::vector<Window> out;
  for (int h = 0; h < 2; ++h) {
    const double start = static_cast<double>(stream.first_t()) + h * half + margin;
    for (std::uint64_t s = 0; s < kEsieInterval / kEsieSegment; ++s) {
      const double t0 = start + static_cast<double>(s * kEsieSegment);
      out.push_back({static_cast<std::uint64_t>(std::llround(t0)), kEsieAccumulation});
    }
  }
  return out;
}

std::vector<EventStream> esie_protocol(const EventStream& stream) {
  std::vector<EventStream> out;
  for (const Window& w : esie_windows(stream)) out.push_back(slice_window(stream, w.t0, w.dt));
  return out;
}

Manifest make_manifest(const WindowIndex& index, const std::vector<std::size_t>& ids,
                       std::string events_path, double fps) {
  Manifest m{std::move(events_path), fps, {}};
  for (std::size_t id : ids) {
    if (id >= index.size()) throw ParameterError("window id " + std::to_string(id) + " out of range");
    m.windows.push_back({id, index.windows[id], index.counts[id]});
  }
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["events"] = m.events_path;
  j["fps"] = m.fps;
  j["windows"] = nlohmann::ordered_json::array();
  for (const auto& w : m.windows) {
    j["windows"].push_back(
        {{"id", w.id}, {"t0", w.window.t0}, {"dt", w.window.dt}, {"count", w.count}});
  }
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Manifest m;
    m.events_path = j.at("events").get<std::string>();
    m.fps = j.value("fps", 25.0);
    for (const auto& w : j.at("windows")) {
      m.windows.push_back({w.value("id", std::size_t{0}),
                           {w.at("t0").get<std::uint64_t>(), w.at("dt").get<std::uint64_t>()},
                           w.value("count", std::size_t{0})});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << manifest_to_json(m);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

}  // namespace evlign
