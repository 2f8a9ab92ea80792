#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "evlign/event_core.hpp"
#include "evlign/representations.hpp"

namespace evlign {

/// Consecutive, non-overlapping windows sorted by t0 with their event counts.
struct WindowIndex {
  std::vector<Window> windows;
  std::vector<std::size_t> counts;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
};

/// Windows of 1e6/fps us starting at the first event and covering it through
/// the last one. Boundaries are rounded to whole microseconds, so windows
/// tile the span exactly; the final window is truncated at the last event.
WindowIndex segment_stream(const EventStream& stream, double fps);

/// Index of the largest count; ties go to the earliest t0. Throws on an empty index.
std::size_t select_max_event_segment(const WindowIndex& index);

/// Up to k ids ordered by count (descending), ties by earlier t0.
std::vector<std::size_t> select_top_k_segments(const WindowIndex& index, std::size_t k);

inline constexpr std::uint64_t kEsieMinDuration = 10'000'000;
inline constexpr std::uint64_t kEsieInterval = 5'000'000;
inline constexpr std::uint64_t kEsieSegment = 1'000'000;
inline constexpr std::uint64_t kEsieAccumulation = 40'000;

/// The ten 40 ms windows of the E-SIE recipe: split the recording into two
/// halves, centre a 5 s interval in each, cut it into five 1 s segments and
/// keep the first 40 ms of each. Throws ProtocolError below 10 s.
std::vector<Window> esie_windows(const EventStream& stream);
std::vector<EventStream> esie_protocol(const EventStream& stream);

struct ManifestEntry {
  std::size_t id = 0;
  Window window;
  std::size_t count = 0;
};

/// What `select` writes and `ssmer --data` reads.
struct Manifest {
  std::string events_path;
  double fps = 25.0;
  std::vector<ManifestEntry> windows;
};

Manifest make_manifest(const WindowIndex& index, const std::vector<std::size_t>& ids,
                       std::string events_path, double fps);
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace evlign
