#include "evlign/representations.hpp"

#include <algorithm>
#include <cmath>

#include "evlign/error.hpp"

namespace evlign {

namespace {

Window default_span(const EventStream& s) {
  if (s.empty()) return {};
  return {s.first_t(), s.last_t() - s.first_t() + 1};
}

template <typename T>
Tensor grid_tensor(const Grid<T>& g) {
  Tensor t;
  t.shape = {g.channels, g.height, g.width};
  t.data.reserve(g.values.size());
  for (T v : g.values) t.data.push_back(static_cast<float>(v));
  return t;
}

}  // namespace

std::uint64_t FrameRep::total() const {
  std::uint64_t s = 0;
  for (auto v : grid.values) s += v;
  return s;
}

double VoxelRep::total() const {
  double s = 0.0;
  for (double v : grid.values) s += v;
  return s;
}

FrameRep build_frame(const EventStream& window, std::optional<Window> span) {
  const auto& g = window.geometry();
  FrameRep rep{Grid<std::uint32_t>(2, g.height, g.width), span.value_or(default_span(window))};
  for (const Event& e : window.events()) {
    ++rep.grid.at(e.polarity > 0 ? 0 : 1, e.y, e.x);
  }
  return rep;
}

VoxelRep build_voxel(const EventStream& window, std::size_t bins, std::optional<Window> span) {
  if (bins == 0) throw ParameterError("build_voxel: bin count must be at least 1");
  const auto& g = window.geometry();
  VoxelRep rep{Grid<double>(bins, g.height, g.width), bins, span.value_or(default_span(window))};
  if (window.empty()) return rep;

  const double t_first = static_cast<double>(window.first_t());
  const double duration = static_cast<double>(window.last_t() - window.first_t());
  const double span_bins = static_cast<double>(bins - 1);
  const auto last_bin = static_cast<std::ptrdiff_t>(bins) - 1;

  for (const Event& e : window.events()) {
    // Divide last so the final event maps exactly onto bin B-1.
    const double ts =
        duration > 0.0 ? (static_cast<double>(e.t) - t_first) * span_bins / duration : 0.0;
    const double pol = e.polarity;
    const auto lower = static_cast<std::ptrdiff_t>(std::floor(ts));
    const double frac = ts - static_cast<double>(lower);
    // Kernel support is (t*-1, t*+1): at most the two neighbouring bins.
    if (lower >= 0 && lower <= last_bin) rep.grid.at(lower, e.y, e.x) += pol * (1.0 - frac);
    if (frac > 0.0 && lower + 1 <= last_bin) rep.grid.at(lower + 1, e.y, e.x) += pol * frac;
  }
  return rep;
}

TimeSurfaceRep build_timesurface(const EventStream& window, std::optional<std::uint64_t> t_ref,
                                 std::optional<double> tau, std::optional<Window> span) {
  const auto& g = window.geometry();
  const Window w = span.value_or(default_span(window));
  const std::uint64_t ref = t_ref.value_or(window.empty() ? w.t0 : window.last_t());
  const double decay = tau.value_or(std::max(1.0, static_cast<double>(w.dt) / 3.0));
  if (!(decay > 0.0) || !std::isfinite(decay)) {
    throw ParameterError("build_timesurface: tau must be positive and finite");
  }
  if (!window.empty() && window.last_t() > ref) {
    throw ParameterError("build_timesurface: reference time " + std::to_string(ref) +
                         " precedes event at " + std::to_string(window.last_t()));
  }

  TimeSurfaceRep rep{Grid<double>(2, g.height, g.width), ref, decay};
  // Latest timestamp per pixel/polarity; stream order makes the last write win.
  std::vector<std::int64_t> latest(rep.grid.values.size(), -1);
  for (const Event& e : window.events()) {
    const std::size_t idx = ((e.polarity > 0 ? 0 : 1) * g.height + e.y) * g.width + e.x;
    latest[idx] = static_cast<std::int64_t>(e.t);
  }
  for (std::size_t i = 0; i < latest.size(); ++i) {
    if (latest[i] < 0) continue;
    const double age = static_cast<double>(ref - static_cast<std::uint64_t>(latest[i]));
    rep.grid.values[i] = std::exp(-age / decay);
  }
  return rep;
}

Grid<double> normalize(const Grid<double>& grid) {
  double peak = 0.0;
  for (double v : grid.values) peak = std::max(peak, std::abs(v));
  Grid<double> out = grid;
  if (peak > 0.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

Grid<double> to_double(const Grid<std::uint32_t>& grid) {
  Grid<double> out(grid.channels, grid.height, grid.width);
  std::copy(grid.values.begin(), grid.values.end(), out.values.begin());
  return out;
}

Tensor to_tensor(const Grid<double>& grid) { return grid_tensor(grid); }
Tensor to_tensor(const FrameRep& rep) { return grid_tensor(rep.grid); }
Tensor to_tensor(const VoxelRep& rep) { return grid_tensor(rep.grid); }
Tensor to_tensor(const TimeSurfaceRep& rep) { return grid_tensor(rep.grid); }

}  // namespace evlign
