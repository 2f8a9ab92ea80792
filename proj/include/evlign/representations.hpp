#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "evlign/event_core.hpp"
#include "evlign/tensor_io.hpp"

namespace evlign {

/// channels x height x width, row-major.
template <typename T>
struct Grid {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), values(c * h * w, T{}) {}

  T& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Time span a representation was built from.
struct Window {
  std::uint64_t t0 = 0;
  std::uint64_t dt = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

/// Per-polarity event counts; channel 0 positive, channel 1 negative.
struct FrameRep {
  Grid<std::uint32_t> grid;
  Window window;

  std::uint64_t total() const;
};

/// Temporally bilinear signed voxel grid. Accumulated and kept in double;
/// narrowed to f32 only when serialized.
struct VoxelRep {
  Grid<double> grid;
  std::size_t bins = 0;
  Window window;

  double total() const;
};

/// Exponential decay of the age of the latest event per pixel and polarity.
struct TimeSurfaceRep {
  Grid<double> grid;
  std::uint64_t t_ref = 0;
  double tau = 0.0;
};

inline constexpr std::size_t kDefaultVoxelBins = 5;

/// Window metadata defaults to [first_t, last_t] of the stream.
FrameRep build_frame(const EventStream& window, std::optional<Window> span = std::nullopt);

/// Event i lands at t* = (B-1)(t_i - t_first)/(t_last - t_first) and adds
/// polarity * max(0, 1 - |b - t*|) to each bin b. A window whose events share
/// one timestamp puts all mass in bin 0. Throws ParameterError for B = 0.
VoxelRep build_voxel(const EventStream& window, std::size_t bins = kDefaultVoxelBins,
                     std::optional<Window> span = std::nullopt);

/// value = exp(-(t_ref - t_last) / tau), 0 where a pixel has no event of that
/// polarity. t_ref defaults to the window end, tau to a third of the window
/// duration (at least 1 us). Throws ParameterError on tau <= 0 or an event
/// later than t_ref.
TimeSurfaceRep build_timesurface(const EventStream& window,
                                 std::optional<std::uint64_t> t_ref = std::nullopt,
                                 std::optional<double> tau = std::nullopt,
                                 std::optional<Window> span = std::nullopt);

/// Divides by the largest absolute entry: counts and time surfaces land in
/// [0, 1], voxels in [-1, 1]. An all-zero grid stays zero.
Grid<double> normalize(const Grid<double>& grid);
Grid<double> to_double(const Grid<std::uint32_t>& grid);

Tensor to_tensor(const Grid<double>& grid);
Tensor to_tensor(const FrameRep& rep);
Tensor to_tensor(const VoxelRep& rep);
Tensor to_tensor(const TimeSurfaceRep& rep);

}  // namespace evlign
