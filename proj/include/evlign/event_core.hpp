#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace evlign {

using Microseconds = std::int64_t;

struct Event {
  std::uint64_t t = 0;  ///< microseconds
  std::int32_t x = 0;   ///< column
  std::int32_t y = 0;   ///< row
  std::int8_t polarity = 1;  ///< +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorGeometry {
  std::uint32_t width = 346;
  std::uint32_t height = 260;

  bool contains(const Event& e) const {
    return e.x >= 0 && e.y >= 0 && static_cast<std::uint32_t>(e.x) < width &&
           static_cast<std::uint32_t>(e.y) < height;
  }
  std::size_t pixel_count() const { return std::size_t{width} * height; }

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

/// Time-ordered, bounds-checked events. Immutable once built, so a stream can
/// be shared by concurrent readers.
class EventStream {
 public:
  EventStream() = default;

  /// Validates geometry, polarity and bounds (ValidationError naming the
  /// offending index) and stably sorts by t if the input is out of order.
  EventStream(SensorGeometry geometry, std::vector<Event> events);

  const SensorGeometry& geometry() const { return geometry_; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  const Event& operator[](std::size_t i) const { return events_[i]; }

  /// True when the source was unsorted and had to be reordered.
  bool was_resorted() const { return resorted_; }

  std::uint64_t first_t() const;
  std::uint64_t last_t() const;

  friend bool operator==(const EventStream& a, const EventStream& b) {
    return a.geometry_ == b.geometry_ && a.events_ == b.events_;
  }

 private:
  SensorGeometry geometry_;
  std::vector<Event> events_;
  bool resorted_ = false;
};

enum class EventFormat { csv, bin };

/// Picks the format from the file extension (`.csv` or anything else -> bin).
EventFormat format_for(const std::filesystem::path& path);

/// CSV has no geometry header, so `csv_geometry` supplies it; the binary
/// format carries its own.
EventStream load_events(const std::filesystem::path& path, EventFormat format,
                        SensorGeometry csv_geometry = {});
EventStream read_events_csv(std::istream& in, SensorGeometry geometry);
EventStream read_events_bin(std::istream& in);

void save_events(const std::filesystem::path& path, const EventStream& stream, EventFormat format);
void write_events_csv(std::ostream& out, const EventStream& stream);
void write_events_bin(std::ostream& out, const EventStream& stream);

/// Events with t0 <= t < t0 + dt, order preserved. dt must be positive.
EventStream slice_window(const EventStream& stream, std::uint64_t t0, std::uint64_t dt);

std::size_t count_events(const EventStream& stream);

/// Stable time-merge of two streams sharing one geometry.
EventStream concatenate(const EventStream& a, const EventStream& b);

}  // namespace evlign
