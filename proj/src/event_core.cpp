#include "evlign/event_core.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "evlign/error.hpp"

namespace evlign {

EventStream::EventStream(SensorGeometry geometry, std::vector<Event> events)
    : geometry_(geometry), events_(std::move(events)) {
  if (geometry_.width == 0 || geometry_.height == 0) {
    throw ValidationError("sensor geometry must be non-empty");
  }
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const Event& e = events_[i];
    if (e.polarity != 1 && e.polarity != -1) {
      throw ValidationError("event " + std::to_string(i) + ": polarity must be +1 or -1");
    }
    if (!geometry_.contains(e)) {
      throw ValidationError("event " + std::to_string(i) + ": coordinate (" + std::to_string(e.x) +
                            ", " + std::to_string(e.y) + ") outside " +
                            std::to_string(geometry_.width) + "x" +
                            std::to_string(geometry_.height));
    }
  }
  auto by_time = [](const Event& a, const Event& b) { return a.t < b.t; };
  if (!std::is_sorted(events_.begin(), events_.end(), by_time)) {
    std::stable_sort(events_.begin(), events_.end(), by_time);
    resorted_ = true;
  }
}

std::uint64_t EventStream::first_t() const { return events_.empty() ? 0 : events_.front().t; }
std::uint64_t EventStream::last_t() const { return events_.empty() ? 0 : events_.back().t; }

EventFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::csv : EventFormat::bin;
}

namespace {

template <typename T>
T parse_field(std::string_view field, std::size_t line, const char* name) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
    field.remove_suffix(1);
  }
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line) + ": bad " + name + " field '" +
                     std::string(field) + "'");
  }
  return value;
}

}  // namespace

EventStream read_events_csv(std::istream& in, SensorGeometry geometry) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<Event> events;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "t_us,x,y,p") {
        throw ParseError("line 1: expected header 't_us,x,y,p', got '" + line + "'");
      }
      continue;
    }
    std::string_view rest(line);
    std::string_view fields[4];
    for (int f = 0; f < 4; ++f) {
      const auto comma = rest.find(',');
      if ((f < 3) == (comma == std::string_view::npos)) {
        throw ParseError("line " + std::to_string(line_no) + ": expected 4 comma-separated fields");
      }
      fields[f] = rest.substr(0, comma);
      rest = f < 3 ? rest.substr(comma + 1) : std::string_view{};
    }
    Event e;
    e.t = parse_field<std::uint64_t>(fields[0], line_no, "t_us");
    e.x = parse_field<std::int32_t>(fields[1], line_no, "x");
    e.y = parse_field<std::int32_t>(fields[2], line_no, "y");
    const auto p = parse_field<int>(fields[3], line_no, "p");
    if (p != 0 && p != 1) {
      throw ParseError("line " + std::to_string(line_no) + ": polarity must be 0 or 1");
    }
    e.polarity = p == 1 ? 1 : -1;
    events.push_back(e);
  }
  if (!header_seen) throw ParseError("line 1: missing header 't_us,x,y,p'");
  return EventStream(geometry, std::move(events));
}

EventStream read_events_bin(std::istream& in) {
  detail::expect_magic(in, "EVS1");
  SensorGeometry g;
  g.width = detail::get_le<std::uint32_t>(in, "width");
  g.height = detail::get_le<std::uint32_t>(in, "height");
  const auto count = detail::get_le<std::uint64_t>(in, "event count");
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.t = detail::get_le<std::uint64_t>(in, "t_us");
    e.x = detail::get_le<std::uint16_t>(in, "x");
    e.y = detail::get_le<std::uint16_t>(in, "y");
    const auto offset = static_cast<long long>(in.tellg());
    const auto p = detail::get_le<std::uint8_t>(in, "p");
    if (p > 1) {
      throw ParseError("polarity byte " + std::to_string(p) + " at offset " +
                       std::to_string(offset));
    }
    e.polarity = p == 1 ? 1 : -1;
    events.push_back(e);
  }
  return EventStream(g, std::move(events));
}

EventStream load_events(const std::filesystem::path& path, EventFormat format,
                        SensorGeometry csv_geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return format == EventFormat::csv ? read_events_csv(in, csv_geometry) : read_events_bin(in);
}

void write_events_csv(std::ostream& out, const EventStream& stream) {
  out << "t_us,x,y,p\n";
  for (const Event& e : stream.events()) {
    out << e.t << ',' << e.x << ',' << e.y << ',' << (e.polarity > 0 ? 1 : 0) << '\n';
  }
}

void write_events_bin(std::ostream& out, const EventStream& stream) {
  const auto& g = stream.geometry();
  if (g.width > 65536 || g.height > 65536) throw ValidationError("geometry exceeds u16 range");
  out.write("EVS1", 4);
  detail::put_le(out, g.width);
  detail::put_le(out, g.height);
  detail::put_le(out, static_cast<std::uint64_t>(stream.size()));
  for (const Event& e : stream.events()) {
    detail::put_le(out, e.t);
    detail::put_le(out, static_cast<std::uint16_t>(e.x));
    detail::put_le(out, static_cast<std::uint16_t>(e.y));
    detail::put_le(out, static_cast<std::uint8_t>(e.polarity > 0 ? 1 : 0));
  }
}

void save_events(const std::filesystem::path& path, const EventStream& stream, EventFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  if (format == EventFormat::csv) {
    write_events_csv(out, stream);
  } else {
    write_events_bin(out, stream);
  }
  if (!out) throw Error("write failed: " + path.string());
}

EventStream slice_window(const EventStream& stream, std::uint64_t t0, std::uint64_t dt) {
  if (dt == 0) throw ParameterError("slice_window: dt must be positive");
  auto evs = stream.events();
  auto lo = std::lower_bound(evs.begin(), evs.end(), t0,
                             [](const Event& e, std::uint64_t t) { return e.t < t; });
  const std::uint64_t t1 = t0 + dt;
  auto hi = std::lower_bound(lo, evs.end(), t1,
                             [](const Event& e, std::uint64_t t) { return e.t < t; });
  return EventStream(stream.geometry(), std::vector<Event>(lo, hi));
}

std::size_t count_events(const EventStream& stream) { return stream.size(); }

EventStream concatenate(const EventStream& a, const EventStream& b) {
  if (!(a.geometry() == b.geometry())) throw ValidationError("concatenate: geometry mismatch");
  std::vector<Event> merged;
  merged.reserve(a.size() + b.size());
  std::merge(a.events().begin(), a.events().end(), b.events().begin(), b.events().end(),
             std::back_inserter(merged), [](const Event& x, const Event& y) { return x.t < y.t; });
  return EventStream(a.geometry(), std::move(merged));
}

}  // namespace evlign
