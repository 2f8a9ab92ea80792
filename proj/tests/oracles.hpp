#pragma once

// Independent reference implementations used only by the tests. Everything
// here is written the slow, obvious way and shares no code with the library
// path it checks (only the plain data types).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "evlign/event_core.hpp"
#include "evlign/matrix.hpp"
#include "evlign/random.hpp"

namespace oracle {

using evlign::Event;
using evlign::EventStream;
using evlign::Matrix;

/// Random stream with geometry up to max_side and up to max_events events.
inline EventStream random_stream(evlign::Rng& rng, std::size_t max_side, std::size_t max_events,
                                 std::uint64_t max_gap = 100) {
  evlign::SensorGeometry g{static_cast<std::uint32_t>(1 + rng.below(max_side)),
                           static_cast<std::uint32_t>(1 + rng.below(max_side))};
  std::vector<Event> evs(rng.below(max_events + 1));
  std::uint64_t t = rng.below(10'000);
  for (auto& e : evs) {
    t += rng.below(max_gap + 1);
    e = {t, static_cast<std::int32_t>(rng.below(g.width)), static_cast<std::int32_t>(rng.below(g.height)),
         static_cast<std::int8_t>(rng.below(2) ? 1 : -1)};
  }
  return EventStream(g, std::move(evs));
}

/// Count of events at (x, y) with the given polarity, by scanning the list.
inline std::uint64_t frame_count(const EventStream& s, int channel, int y, int x) {
  std::uint64_t n = 0;
  for (const auto& e : s.events()) {
    if (e.x == x && e.y == y && (channel == 0) == (e.polarity > 0)) ++n;
  }
  return n;
}

/// Voxel value by evaluating the triangular kernel on every bin for every event.
inline std::vector<double> voxel_dense(const EventStream& s, std::size_t bins) {
  const auto& g = s.geometry();
  std::vector<double> out(bins * g.height * g.width, 0.0);
  if (s.empty()) return out;
  const double t0 = static_cast<double>(s.first_t());
  const double t1 = static_cast<double>(s.last_t());
  for (const auto& e : s.events()) {
    const double ts = t1 > t0 ? (bins - 1.0) * (static_cast<double>(e.t) - t0) / (t1 - t0) : 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      out[(b * g.height + e.y) * g.width + e.x] += e.polarity * std::max(0.0, 1.0 - std::abs(b - ts));
    }
  }
  return out;
}

inline double polarity_sum(const EventStream& s) {
  double total = 0.0;
  for (const auto& e : s.events()) total += e.polarity;
  return total;
}

/// Integrate-and-fire crossing count for a monotone-segment path of log
/// intensities, using closed-form floor arithmetic per segment. Returns
/// {positive, negative}.
inline std::pair<long, long> crossing_counts(const std::vector<double>& path, double c) {
  long pos = 0, neg = 0;
  double ref = path.front();
  for (std::size_t k = 1; k < path.size(); ++k) {
    const double target = path[k];
    if (target > ref) {
      const long n = static_cast<long>(std::floor((target - ref) / c));
      pos += n;
      ref += n * c;
    } else if (target < ref) {
      const long n = static_cast<long>(std::floor((ref - target) / c));
      neg += n;
      ref -= n * c;
    }
  }
  return {pos, neg};
}

/// Same count by stepping time in 1 us increments along the linear path.
inline std::pair<long, long> crossing_counts_dense(const std::vector<double>& path, double c, double period_us) {
  long pos = 0, neg = 0;
  double ref = path.front();
  const auto steps = static_cast<long>(std::llround(period_us));
  for (std::size_t k = 1; k < path.size(); ++k) {
    for (long s = 1; s <= steps; ++s) {
      const double l = path[k - 1] + (path[k] - path[k - 1]) * static_cast<double>(s) / static_cast<double>(steps);
      while (l - ref >= c) {
        ref += c;
        ++pos;
      }
      while (ref - l >= c) {
        ref -= c;
        ++neg;
      }
    }
  }
  return {pos, neg};
}

// ---------------------------------------------------------------------------
// Attention reference: naive loops, explicit per-head slicing.

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline Matrix naive_softmax(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) total += std::exp(z(i, j));
    for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = std::exp(z(i, j)) / total;
  }
  return out;
}

inline Matrix slice(const Matrix& m, std::size_t c0, std::size_t n) {
  Matrix out(m.rows(), n);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = m(i, c0 + j);
  }
  return out;
}

inline Matrix plus(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + b(i, j);
  }
  return out;
}

struct NaiveHead {
  Matrix wq, wk, wv;
};

struct NaiveBlock {
  std::vector<NaiveHead> heads;
  Matrix wp;
  std::vector<double> gamma, beta;
};

/// softmax(q_in_h Wq (k_in_h Wk)^T / sqrt(C_h)) for one head.
inline Matrix naive_weights(const Matrix& q_in, const Matrix& k_in, const NaiveBlock& b, std::size_t h) {
  const std::size_t ch = b.heads[h].wq.rows();
  const Matrix q = naive_matmul(slice(q_in, h * ch, ch), b.heads[h].wq);
  const Matrix k = naive_matmul(slice(k_in, h * ch, ch), b.heads[h].wk);
  Matrix logits(q.rows(), k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < ch; ++d) s += q(i, d) * k(j, d);
      logits(i, j) = s / std::sqrt(static_cast<double>(ch));
    }
  }
  return naive_softmax(logits);
}

inline Matrix naive_attention(const Matrix& q_in, const Matrix& k_in, const Matrix& v_in, const NaiveBlock& b) {
  const std::size_t heads = b.heads.size();
  const std::size_t ch = b.heads[0].wq.rows();
  Matrix concat(q_in.rows(), heads * ch);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix a = naive_weights(q_in, k_in, b, h);
    const Matrix v = naive_matmul(slice(v_in, h * ch, ch), b.heads[h].wv);
    const Matrix o = naive_matmul(a, v);
    for (std::size_t i = 0; i < o.rows(); ++i) {
      for (std::size_t j = 0; j < ch; ++j) concat(i, h * ch + j) = o(i, j);
    }
  }
  return naive_matmul(concat, b.wp);
}

inline Matrix naive_layer_norm(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  Matrix out(x.rows(), x.cols());
  const double c = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j) / c;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / c;
    const double sd = std::sqrt(std::max(var, 1e-5));
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = gamma[j] * (x(i, j) - mean) / sd + beta[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics reference

inline double naive_nme(const std::vector<std::array<double, 2>>& pred, const std::vector<std::array<double, 2>>& gt,
                        std::size_t i0, std::size_t i1) {
  const double d = std::sqrt((gt[i0][0] - gt[i1][0]) * (gt[i0][0] - gt[i1][0]) +
                             (gt[i0][1] - gt[i1][1]) * (gt[i0][1] - gt[i1][1]));
  double total = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    total += std::sqrt((pred[k][0] - gt[k][0]) * (pred[k][0] - gt[k][0]) +
                       (pred[k][1] - gt[k][1]) * (pred[k][1] - gt[k][1]));
  }
  return 100.0 * total / static_cast<double>(gt.size()) / d;
}

inline double naive_failure_rate(const std::vector<double>& nmes, double thr) {
  double fails = 0.0;
  for (double v : nmes) fails += v > thr ? 1.0 : 0.0;
  return 100.0 * fails / static_cast<double>(nmes.size());
}

/// Integrates the CED step function between its sorted breakpoints.
inline double step_auc(std::vector<double> nmes, double thr) {
  std::sort(nmes.begin(), nmes.end());
  const double n = static_cast<double>(nmes.size());
  double area = 0.0;
  double prev = 0.0;
  std::size_t below = 0;
  while (below < nmes.size() && nmes[below] <= 0.0) ++below;
  for (std::size_t i = below; i <= nmes.size(); ++i) {
    const double next = i < nmes.size() ? std::min(nmes[i], thr) : thr;
    if (next > prev) area += (next - prev) * (static_cast<double>(i) / n);
    prev = std::max(prev, next);
    if (prev >= thr) break;
  }
  return area / thr;
}

/// Trapezoid rule on CED(e) = |{nme <= e}| / n sampled every `step`.
inline double trapezoid_auc(const std::vector<double>& nmes, double thr, double step) {
  auto ced = [&](double e) {
    double c = 0.0;
    for (double v : nmes) c += v <= e ? 1.0 : 0.0;
    return c / static_cast<double>(nmes.size());
  };
  const auto n = static_cast<long>(std::llround(thr / step));
  double area = 0.0;
  double prev = ced(0.0);
  for (long i = 1; i <= n; ++i) {
    const double cur = ced(thr * static_cast<double>(i) / static_cast<double>(n));
    area += 0.5 * (prev + cur) * (thr / static_cast<double>(n));
    prev = cur;
  }
  return area / thr;
}

}  // namespace oracle
