#pragma once

#include <filesystem>
#include <vector>

#include "evlign/event_core.hpp"
#include "evlign/matrix.hpp"

namespace evlign {

/// Luminance frames (H x W, values in [0, 1]) sampled at a fixed rate.
struct FrameSequence {
  std::vector<Matrix> frames;
  double fps = 25.0;

  /// At least two frames, one shared geometry, finite values in [0, 1], fps > 0.
  void validate() const;
  double period_us() const { return 1e6 / fps; }
  double duration_us() const { return period_us() * static_cast<double>(frames.size() - 1); }
};

struct SimulatorConfig {
  double threshold = 0.2;  ///< log-intensity contrast step C
  double log_eps = 1e-3;   ///< L = ln(I + log_eps)
  int interpolation_factor = 1;

  void validate() const;
};

/// Linear blending: factor-1 new frames per gap, fps multiplied by factor.
FrameSequence interpolate_frames(const FrameSequence& seq, int factor);

/// Ideal DVS pixel model. Each pixel keeps a log-intensity reference R,
/// initialised from frame 0. Between samples L moves linearly in time; every
/// time it gets C away from R an event fires at the exact crossing time
/// (rounded to the nearest microsecond) and R steps by C toward L. Output is
/// sorted by (t, y, x, polarity).
EventStream frames_to_events(const FrameSequence& seq, const SimulatorConfig& cfg = {});

/// Reads every `.tns` file in `dir` (rank-2, H x W) in filename order.
FrameSequence read_frame_directory(const std::filesystem::path& dir, double fps);

}  // namespace evlign
