#include "evlign/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "evlign/error.hpp"
#include "evlign/parallel.hpp"
#include "evlign/tensor_io.hpp"

namespace evlign {

void FrameSequence::validate() const {
  if (frames.size() < 2) throw ParameterError("frame sequence needs at least 2 frames");
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ParameterError("fps must be positive");
  const auto h = frames.front().rows();
  const auto w = frames.front().cols();
  if (h == 0 || w == 0) throw ParameterError("frames must be non-empty");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].rows() != h || frames[i].cols() != w) {
      throw ShapeError("frame " + std::to_string(i) + " geometry differs from frame 0");
    }
    for (double v : frames[i].data()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("frame " + std::to_string(i) + ": luminance outside [0, 1]");
      }
    }
  }
}

void SimulatorConfig::validate() const {
  if (!(threshold > 0.0)) throw ParameterError("threshold must be positive");
  if (!(log_eps > 0.0)) throw ParameterError("log_eps must be positive");
  if (interpolation_factor < 1) throw ParameterError("interpolation factor must be >= 1");
}

FrameSequence interpolate_frames(const FrameSequence& seq, int factor) {
  if (factor < 1) throw ParameterError("interpolation factor must be >= 1");
  if (factor == 1) return seq;
  FrameSequence out;
  out.fps = seq.fps * factor;
  for (std::size_t k = 0; k + 1 < seq.frames.size(); ++k) {
    const Matrix& a = seq.frames[k];
    const Matrix& b = seq.frames[k + 1];
    out.frames.push_back(a);
    for (int j = 1; j < factor; ++j) {
      const double w = static_cast<double>(j) / factor;
      Matrix m(a.rows(), a.cols());
      for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = (1.0 - w) * a.data()[i] + w * b.data()[i];
      }
      out.frames.push_back(std::move(m));
    }
  }
  if (!seq.frames.empty()) out.frames.push_back(seq.frames.back());
  return out;
}

EventStream frames_to_events(const FrameSequence& input, const SimulatorConfig& cfg) {
  cfg.validate();
  input.validate();
  const FrameSequence seq = interpolate_frames(input, cfg.interpolation_factor);

  const std::size_t height = seq.frames.front().rows();
  const std::size_t width = seq.frames.front().cols();
  const double period = seq.period_us();
  const double c = cfg.threshold;

  std::vector<Matrix> log_frames;
  log_frames.reserve(seq.frames.size());
  for (const Matrix& f : seq.frames) {
    Matrix l(height, width);
    for (std::size_t i = 0; i < l.size(); ++i) l.data()[i] = std::log(f.data()[i] + cfg.log_eps);
    log_frames.push_back(std::move(l));
  }

  std::vector<std::vector<Event>> per_row(height);
  parallel_for(height, [&](std::size_t y) {
    auto& out = per_row[y];
    for (std::size_t x = 0; x < width; ++x) {
      double ref = log_frames[0](y, x);
      for (std::size_t k = 0; k + 1 < log_frames.size(); ++k) {
        const double la = log_frames[k](y, x);
        const double lb = log_frames[k + 1](y, x);
        if (lb == la) continue;
        const double t_start = period * static_cast<double>(k);
        const double slope = period / (lb - la);
        const std::int8_t pol = lb > la ? 1 : -1;
        // R stays within C of L, so the next level is always ahead of la.
        while (true) {
          const double level = ref + pol * c;
          if (pol > 0 ? level > lb : level < lb) break;
          const double t = t_start + (level - la) * slope;
          out.push_back(Event{static_cast<std::uint64_t>(std::llround(t)),
                              static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), pol});
          ref = level;
        }
      }
    }
  });

  std::vector<Event> events;
  for (auto& row : per_row) events.insert(events.end(), row.begin(), row.end());
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.t, a.y, a.x, a.polarity) < std::tie(b.t, b.y, b.x, b.polarity);
  });
  SensorGeometry g{static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)};
  return EventStream(g, std::move(events));
}

FrameSequence read_frame_directory(const std::filesystem::path& dir, double fps) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tns") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  FrameSequence seq;
  seq.fps = fps;
  for (const auto& f : files) seq.frames.push_back(to_matrix(read_tensor(f)));
  return seq;
}

}  // namespace evlign
