#include "evlign/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "evlign/attention.hpp"
#include "evlign/dataset_tools.hpp"
#include "evlign/event_core.hpp"
#include "evlign/metrics.hpp"
#include "evlign/random.hpp"
#include "evlign/representations.hpp"
#include "evlign/simulator.hpp"
#include "evlign/ssmer.hpp"
#include "evlign/tensor_io.hpp"

namespace evlign {

namespace {

EventStream random_stream(Rng& rng, std::size_t max_events) {
  SensorGeometry g{static_cast<std::uint32_t>(1 + rng.below(64)), static_cast<std::uint32_t>(1 + rng.below(64))};
  std::vector<Event> evs(rng.below(max_events + 1));
  std::uint64_t t = rng.below(1000);
  for (auto& e : evs) {
    t += rng.below(50);
    e = {t, static_cast<std::int32_t>(rng.below(g.width)), static_cast<std::int32_t>(rng.below(g.height)),
         static_cast<std::int8_t>(rng.below(2) ? 1 : -1)};
  }
  return EventStream(g, std::move(evs));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult check(const std::string& name, const std::function<std::string()>& body) {
  try {
    const std::string failure = body();
    return {name, failure.empty(), failure};
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;

  out.push_back(check("representation mass conservation", [&]() -> std::string {
    Rng rng(seed + 1);
    for (int i = 0; i < 200; ++i) {
      const EventStream s = random_stream(rng, 2000);
      long signed_sum = 0;
      for (const auto& e : s.events()) signed_sum += e.polarity;
      if (build_frame(s).total() != s.size()) return "frame sum differs from count";
      const double v = build_voxel(s, 1 + rng.below(8)).total();
      if (std::abs(v - signed_sum) > 1e-9 * std::max<std::size_t>(1, s.size())) return "voxel mass off by " + fmt(v - signed_sum);
    }
    return {};
  }));

  out.push_back(check("time windows partition and slice idempotently", [&]() -> std::string {
    Rng rng(seed + 2);
    for (int i = 0; i < 100; ++i) {
      const EventStream s = random_stream(rng, 500);
      const std::uint64_t t0 = rng.below(2000);
      const std::uint64_t dt = 1 + rng.below(500);
      const EventStream once = slice_window(s, t0, dt);
      if (!(slice_window(once, t0, dt) == once)) return "slice not idempotent";
      std::size_t parts = 0;
      for (int k = 0; k < 4; ++k) parts += count_events(slice_window(s, t0 + k * dt, dt));
      if (parts != count_events(slice_window(s, t0, 4 * dt))) return "window counts do not add up";
      const WindowIndex idx = segment_stream(s, 25.0 + rng.below(400));
      std::size_t total = 0;
      for (auto c : idx.counts) total += c;
      if (total != s.size()) return "segment counts do not sum to the stream size";
    }
    return {};
  }));

  out.push_back(check("simulator crossing counts", [&]() -> std::string {
    const double eps = 1e-3;
    FrameSequence seq;
    seq.fps = 25.0;
    seq.frames = {Matrix(1, 1, std::exp(-1.0) - eps), Matrix(1, 1, std::exp(-1.0 + 0.65) - eps)};
    const EventStream up = frames_to_events(seq);
    if (up.size() != 3) return "0.65 rise gave " + std::to_string(up.size()) + " events, expected 3";
    for (const auto& e : up.events()) {
      if (e.polarity != 1) return "rise produced a negative event";
    }
    seq.frames = {Matrix(2, 3, 0.4), Matrix(2, 3, 0.4), Matrix(2, 3, 0.4)};
    if (!frames_to_events(seq).empty()) return "constant frames produced events";
    return {};
  }));

  out.push_back(check("E-SIE protocol windows", [&]() -> std::string {
    const EventStream s(SensorGeometry{}, {Event{0, 0, 0, 1}, Event{10'400'000, 1, 1, -1}});
    const auto w = esie_windows(s);
    if (w.size() != 10) return "expected 10 windows";
    const std::uint64_t starts[] = {100'000, 1'100'000, 2'100'000, 3'100'000, 4'100'000,
                                    5'300'000, 6'300'000, 7'300'000, 8'300'000, 9'300'000};
    for (std::size_t i = 0; i < 10; ++i) {
      if (w[i].t0 != starts[i] || w[i].dt != kEsieAccumulation) return "window " + std::to_string(i) + " misplaced";
    }
    return {};
  }));

  out.push_back(check("attention rows are probability vectors", [&]() -> std::string {
    for (std::uint64_t k = 0; k < 20; ++k) {
      const auto p = AttentionParams::random(8, 2, seed + 100 + k);
      const auto e = Embeddings::random(3, 4, 8, seed + 200 + k);
      for (std::size_t h = 0; h < 2; ++h) {
        const Matrix a = cmfa_weights(e, p, h);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          double s = 0.0;
          for (double v : a.row(r)) {
            if (v < 0.0) return "negative weight";
            s += v;
          }
          if (std::abs(s - 1.0) > 1e-6) return "row sum " + fmt(s);
        }
      }
    }
    return {};
  }));

  out.push_back(check("zero projections make the layer an identity", [&]() -> std::string {
    const auto p = AttentionParams::zeros(8, 2);
    const auto e = Embeddings::random(3, 4, 8, seed + 3);
    if (!(layer_forward(e.tokens, e, p).output == e.tokens)) return "layer changed T_prev";
    return {};
  }));

  out.push_back(check("attention gradients match finite differences", [&]() -> std::string {
    for (auto target : {GradCheckTarget::cmfa_block, GradCheckTarget::layer_forward}) {
      for (std::uint64_t s = 0; s < 3; ++s) {
        GradCheckConfig cfg;
        cfg.seed = seed + s;
        const auto r = grad_check(target, cfg);
        if (r.max_relative_error >= 1e-4) return to_string(target) + ": " + fmt(r.max_relative_error) + " at " + r.worst;
      }
    }
    return {};
  }));

  out.push_back(check("SSMER loss identities", [&]() -> std::string {
    Rng rng(seed + 4);
    std::vector<double> v(16);
    for (double& x : v) x = rng.normal();
    if (std::abs(cosine_distance(v, v) + 1.0) > 1e-12) return "D(p, p) != -1";
    Matrix m(2, 16);
    for (double& x : m.data()) x = rng.normal();
    const std::array<BranchOutputs, 3> aligned{BranchOutputs{m, m, m, m}, BranchOutputs{m, m, m, m},
                                              BranchOutputs{m, m, m, m}};
    if (std::abs(multi_rep_loss(aligned) + 3.0) > 1e-12) return "aligned L_MR != -3";
    std::vector<double> w(16);
    for (double& x : w) x = rng.normal();
    std::vector<double> vs = v, ws = w;
    for (double& x : vs) x *= 3.7;
    for (double& x : ws) x *= 0.02;
    if (std::abs(cosine_distance(v, w) - cosine_distance(vs, ws)) > 1e-9) return "scale invariance broken";
    return {};
  }));

  out.push_back(check("L_MR gradient matches finite differences", [&]() -> std::string {
    Rng rng(seed + 5);
    std::array<BranchOutputs, 3> pairs;
    for (auto& b : pairs) {
      for (Matrix* m : {&b.z1, &b.z2, &b.p1, &b.p2}) {
        *m = Matrix(3, 6);
        for (double& x : m->data()) x = rng.normal();
      }
    }
    const auto g = multi_rep_loss_grad(pairs, true);
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (int which = 0; which < 2; ++which) {
        Matrix& p = which == 0 ? pairs[i].p1 : pairs[i].p2;
        const Matrix& gp = which == 0 ? g[i].d_p1 : g[i].d_p2;
        for (std::size_t k = 0; k < p.size(); ++k) {
          const double saved = p.data()[k];
          p.data()[k] = saved + 1e-5;
          const double up = multi_rep_loss(pairs);
          p.data()[k] = saved - 1e-5;
          const double down = multi_rep_loss(pairs);
          p.data()[k] = saved;
          const double num = (up - down) / 2e-5;
          worst = std::max(worst, std::abs(num - gp.data()[k]) / std::max({std::abs(num), std::abs(gp.data()[k]), 1e-3}));
        }
      }
    }
    if (worst >= 1e-5) return "max relative error " + fmt(worst);
    return {};
  }));

  out.push_back(check("metric invariances", [&]() -> std::string {
    Rng rng(seed + 6);
    std::vector<Point2> gp(5), pp(5);
    for (std::size_t k = 0; k < 5; ++k) {
      gp[k] = {rng.uniform(0, 100), rng.uniform(0, 100)};
      pp[k] = {gp[k][0] + rng.normal(), gp[k][1] + rng.normal()};
    }
    const auto gt = LandmarkSet::from_points(gp);
    const auto pred = LandmarkSet::from_points(pp);
    const double base = nme(pred, gt, Normalization::inter_pupil);
    auto moved = [](std::vector<Point2> v, double s, double dx) {
      for (auto& p : v) p = {s * p[0] + dx, s * p[1] - dx};
      return LandmarkSet::from_points(std::move(v));
    };
    if (std::abs(nme(moved(pp, 2.5, 13.0), moved(gp, 2.5, 13.0), Normalization::inter_pupil) - base) > 1e-9 * base) {
      return "NME not invariant to translation and scale";
    }
    const std::vector<double> single{0.05};
    if (auc(single) != 0.5) return "AUC({0.05}) != 0.5";
    const std::vector<double> fr{0.05, 0.1, 0.15};
    if (std::abs(failure_rate(fr) - 100.0 / 3.0) > 1e-12) return "FR boundary convention";
    return {};
  }));

  out.push_back(check("file formats round-trip", [&]() -> std::string {
    Rng rng(seed + 7);
    const EventStream s = random_stream(rng, 300);
    std::stringstream bin, csv;
    write_events_bin(bin, s);
    write_events_csv(csv, s);
    if (!(read_events_bin(bin) == s)) return "binary events differ after round trip";
    if (!(read_events_csv(csv, s.geometry()) == s)) return "CSV events differ after round trip";
    Tensor t{{2, 3, 4}, std::vector<float>(24)};
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    std::stringstream tb;
    write_tensor(tb, t);
    const Tensor back = read_tensor(tb);
    if (back.shape != t.shape || back.data != t.data) return "tensor differs after round trip";
    return {};
  }));

  return out;
}

}  // namespace evlign
