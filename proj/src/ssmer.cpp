#include "evlign/ssmer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evlign/error.hpp"
#include "evlign/parallel.hpp"
#include "evlign/simulator.hpp"

namespace evlign {

// ---------------------------------------------------------------------------
// Losses

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_branch_shapes(const BranchOutputs& b) {
  const auto n = b.z1.rows();
  const auto d = b.z1.cols();
  for (const Matrix* m : {&b.z2, &b.p1, &b.p2}) {
    if (m->rows() != n || m->cols() != d) throw ShapeError("branch outputs must share one batch x D shape");
  }
  if (n == 0 || d == 0) throw ShapeError("branch outputs are empty");
}

}  // namespace

double cosine_distance(std::span<const double> p, std::span<const double> z) {
  if (p.size() != z.size()) throw ShapeError("cosine_distance: length mismatch");
  const double np = norm2(p);
  const double nz = norm2(z);
  if (!(np > 0.0) || !(nz > 0.0)) throw NumericError("cosine_distance: zero-norm embedding");
  if (!std::isfinite(np) || !std::isfinite(nz)) throw NumericError("cosine_distance: non-finite embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += (p[i] / np) * (z[i] / nz);
  return -dot;
}

std::vector<double> cosine_distance_grad(std::span<const double> p, std::span<const double> z) {
  if (p.size() != z.size()) throw ShapeError("cosine_distance_grad: length mismatch");
  const double np = norm2(p);
  const double nz = norm2(z);
  if (!(np > 0.0) || !(nz > 0.0)) throw NumericError("cosine_distance_grad: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * z[i];
  std::vector<double> g(p.size());
  const double a = 1.0 / (np * nz);
  const double b = dot / (np * np * np * nz);
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = -(z[i] * a - p[i] * b);
  return g;
}

double symmetric_pair_loss(const BranchOutputs& b) {
  check_branch_shapes(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b.z1.rows(); ++i) {
    total += 0.5 * cosine_distance(b.p1.row(i), b.z2.row(i)) + 0.5 * cosine_distance(b.p2.row(i), b.z1.row(i));
  }
  return total / static_cast<double>(b.z1.rows());
}

BranchGradients symmetric_pair_loss_grad(const BranchOutputs& b, bool stop_gradient) {
  check_branch_shapes(b);
  const std::size_t n = b.z1.rows();
  const std::size_t d = b.z1.cols();
  BranchGradients g{Matrix(n, d), Matrix(n, d), Matrix(n, d), Matrix(n, d)};
  const double w = 0.5 / static_cast<double>(n);
  auto put = [&](Matrix& dst, std::size_t row, const std::vector<double>& src) {
    for (std::size_t j = 0; j < d; ++j) dst(row, j) += w * src[j];
  };
  for (std::size_t i = 0; i < n; ++i) {
    put(g.d_p1, i, cosine_distance_grad(b.p1.row(i), b.z2.row(i)));
    put(g.d_p2, i, cosine_distance_grad(b.p2.row(i), b.z1.row(i)));
    if (!stop_gradient) {
      // D is symmetric in its arguments.
      put(g.d_z2, i, cosine_distance_grad(b.z2.row(i), b.p1.row(i)));
      put(g.d_z1, i, cosine_distance_grad(b.z1.row(i), b.p2.row(i)));
    }
  }
  return g;
}

double multi_rep_loss(std::span<const BranchOutputs, 3> pairs) {
  double total = 0.0;
  for (const auto& b : pairs) total += symmetric_pair_loss(b);
  return total;
}

std::array<BranchGradients, 3> multi_rep_loss_grad(std::span<const BranchOutputs, 3> pairs, bool stop_gradient) {
  return {symmetric_pair_loss_grad(pairs[0], stop_gradient), symmetric_pair_loss_grad(pairs[1], stop_gradient),
          symmetric_pair_loss_grad(pairs[2], stop_gradient)};
}

// ---------------------------------------------------------------------------
// Perceptron stages

Mlp Mlp::zeros_like() const {
  Mlp out;
  for (const Stage& s : stages) {
    Stage z;
    z.w = Matrix(s.w.rows(), s.w.cols());
    z.b.assign(s.b.size(), 0.0);
    z.batch_norm = s.batch_norm;
    z.gamma.assign(s.gamma.size(), 0.0);
    z.beta.assign(s.beta.size(), 0.0);
    z.running_mean.assign(s.running_mean.size(), 0.0);
    z.running_var.assign(s.running_var.size(), 0.0);
    z.relu = s.relu;
    out.stages.push_back(std::move(z));
  }
  return out;
}

Stage make_stage(std::size_t in, std::size_t out, bool batch_norm, bool relu, Rng& rng) {
  Stage s;
  s.w = Matrix(in, out);
  const double stddev = std::sqrt(2.0 / static_cast<double>(in));
  for (double& v : s.w.data()) v = stddev * rng.normal();
  s.b.assign(out, 0.0);
  s.batch_norm = batch_norm;
  if (batch_norm) {
    s.gamma.assign(out, 1.0);
    s.beta.assign(out, 0.0);
    s.running_mean.assign(out, 0.0);
    s.running_var.assign(out, 1.0);
  }
  s.relu = relu;
  return s;
}

MlpCache mlp_forward(const Mlp& mlp, const Matrix& x, Mode mode) {
  MlpCache k;
  Matrix cur = x;
  const std::size_t n = x.rows();
  for (const Stage& s : mlp.stages) {
    if (cur.cols() != s.in_dim()) {
      throw ShapeError("mlp stage expects " + std::to_string(s.in_dim()) + " inputs, got " +
                       std::to_string(cur.cols()));
    }
    if (s.batch_norm && mode == Mode::train && n < 2) {
      throw ParameterError("batch norm in train mode needs a batch of at least 2");
    }
    k.inputs.push_back(cur);
    Matrix a = matmul(cur, s.w);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < s.out_dim(); ++j) a(r, j) += s.b[j];
    }
    k.affine.push_back(a);

    Matrix y = a;
    std::vector<double> inv_std, mean_v, var_v;
    std::vector<bool> floored;
    Matrix xhat;
    if (s.batch_norm) {
      const std::size_t m = s.out_dim();
      xhat = Matrix(n, m);
      inv_std.resize(m);
      mean_v.resize(m);
      var_v.resize(m);
      floored.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::train) {
          for (std::size_t r = 0; r < n; ++r) mean += a(r, j);
          mean /= static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r) var += (a(r, j) - mean) * (a(r, j) - mean);
          var /= static_cast<double>(n);
        } else {
          mean = s.running_mean[j];
          var = s.running_var[j];
        }
        mean_v[j] = mean;
        var_v[j] = var;
        floored[j] = var < kBatchNormVarianceFloor;
        inv_std[j] = 1.0 / std::sqrt(std::max(var, kBatchNormVarianceFloor));
        for (std::size_t r = 0; r < n; ++r) {
          xhat(r, j) = (a(r, j) - mean) * inv_std[j];
          y(r, j) = s.gamma[j] * xhat(r, j) + s.beta[j];
        }
      }
    }
    k.xhat.push_back(std::move(xhat));
    k.inv_std.push_back(std::move(inv_std));
    k.batch_mean.push_back(std::move(mean_v));
    k.batch_var.push_back(std::move(var_v));
    k.floored.push_back(std::move(floored));
    k.pre_relu.push_back(y);
    if (s.relu) {
      for (double& v : y.data()) v = std::max(v, 0.0);
    }
    cur = std::move(y);
  }
  k.output = std::move(cur);
  k.mode = mode;
  return k;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& k, const Matrix& d_out, Mlp& grads) {
  Matrix d = d_out;
  for (std::size_t si = mlp.stages.size(); si-- > 0;) {
    const Stage& s = mlp.stages[si];
    Stage& g = grads.stages[si];
    const std::size_t n = d.rows();
    const std::size_t m = s.out_dim();
    if (s.relu) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(k.pre_relu[si].data()[i] > 0.0)) d.data()[i] = 0.0;
      }
    }
    if (s.batch_norm) {
      const Matrix& xhat = k.xhat[si];
      Matrix da(n, m);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < m; ++j) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          g.gamma[j] += d(r, j) * xhat(r, j);
          g.beta[j] += d(r, j);
          const double dxh = d(r, j) * s.gamma[j];
          mean_d += dxh;
          mean_dx += dxh * xhat(r, j);
        }
        mean_d *= inv_n;
        mean_dx *= inv_n;
        // Eval mode normalises with constants; a floored variance is a constant too.
        if (k.mode == Mode::eval) mean_d = 0.0;
        if (k.mode == Mode::eval || k.floored[si][j]) mean_dx = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double dxh = d(r, j) * s.gamma[j];
          da(r, j) = k.inv_std[si][j] * (dxh - mean_d - xhat(r, j) * mean_dx);
        }
      }
      d = std::move(da);
    }
    g.w += matmul_tn(k.inputs[si], d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < m; ++j) g.b[j] += d(r, j);
    }
    d = matmul_nt(d, s.w);
  }
  return d;
}

void update_running_stats(Mlp& mlp, const MlpCache& k) {
  for (std::size_t si = 0; si < mlp.stages.size(); ++si) {
    Stage& s = mlp.stages[si];
    if (!s.batch_norm) continue;
    const double n = static_cast<double>(k.inputs[si].rows());
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    for (std::size_t j = 0; j < s.out_dim(); ++j) {
      s.running_mean[j] = (1.0 - kBatchNormMomentum) * s.running_mean[j] + kBatchNormMomentum * k.batch_mean[si][j];
      s.running_var[j] =
          (1.0 - kBatchNormMomentum) * s.running_var[j] + kBatchNormMomentum * k.batch_var[si][j] * unbias;
    }
  }
}

// ---------------------------------------------------------------------------
// Heads

SsmerHeads SsmerHeads::create(std::size_t in_dim, std::size_t hidden, std::size_t embed_dim,
                              std::size_t predictor_hidden, Rng& rng) {
  SsmerHeads h;
  h.projector.stages.push_back(make_stage(in_dim, hidden, true, true, rng));
  h.projector.stages.push_back(make_stage(hidden, hidden, true, true, rng));
  h.projector.stages.push_back(make_stage(hidden, embed_dim, false, false, rng));
  h.predictor.stages.push_back(make_stage(embed_dim, predictor_hidden, true, true, rng));
  h.predictor.stages.push_back(make_stage(predictor_hidden, embed_dim, true, true, rng));
  return h;
}

HeadsOutput heads_forward(const Matrix& x, const SsmerHeads& heads, Mode mode) {
  HeadsOutput out;
  out.projector_cache = mlp_forward(heads.projector, x, mode);
  out.z = out.projector_cache.output;
  out.predictor_cache = mlp_forward(heads.predictor, out.z, mode);
  out.p = out.predictor_cache.output;
  return out;
}

// ---------------------------------------------------------------------------
// Data

std::string to_string(RepKind k) {
  switch (k) {
    case RepKind::frame: return "frame";
    case RepKind::voxel: return "voxel";
    case RepKind::timesurface: return "timesurface";
  }
  return "?";
}

RepresentationTriple build_triple(const EventStream& window, std::size_t bins) {
  RepresentationTriple t;
  t.grids[0] = normalize(to_double(build_frame(window).grid));
  t.grids[1] = normalize(build_voxel(window, bins).grid);
  t.grids[2] = normalize(build_timesurface(window).grid);
  return t;
}

std::vector<RepresentationTriple> build_triples(std::span<const EventStream> windows, std::size_t bins) {
  std::vector<RepresentationTriple> out(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) { out[i] = build_triple(windows[i], bins); });
  return out;
}

std::vector<EventStream> make_synthetic_windows(std::size_t count, SensorGeometry geometry, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t h = geometry.height;
  const std::size_t w = geometry.width;
  std::vector<EventStream> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t blobs = 1 + rng.below(2);
    struct Blob {
      double cx, cy, vx, vy, sigma, amp;
    };
    std::vector<Blob> bs;
    for (std::size_t b = 0; b < blobs; ++b) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double speed = rng.uniform(1.0, 3.0);
      bs.push_back({rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h, speed * std::cos(angle),
                    speed * std::sin(angle), rng.uniform(1.2, 3.0), rng.uniform(0.25, 0.5) / blobs});
    }
    const double background = rng.uniform(0.1, 0.3);
    FrameSequence seq;
    seq.fps = 25.0;
    for (int f = 0; f < 4; ++f) {
      Matrix img(h, w, background);
      for (const Blob& b : bs) {
        const double cx = b.cx + b.vx * f;
        const double cy = b.cy + b.vy * f;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img(y, x) += b.amp * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
          }
        }
      }
      for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
      seq.frames.push_back(std::move(img));
    }
    EventStream s = frames_to_events(seq);
    if (s.size() >= 8) out.push_back(std::move(s));
  }
  return out;
}

Grid<double> augment(const Grid<double>& grid, Rng& rng, const AugmentConfig& cfg) {
  const std::size_t h = grid.height;
  const std::size_t w = grid.width;
  const double side = rng.uniform(cfg.min_crop_scale, 1.0);
  const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side * h)));
  const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side * w)));
  const std::size_t oy = rng.below(h - ch + 1);
  const std::size_t ox = rng.below(w - cw + 1);
  const bool flip = rng.uniform() < cfg.flip_probability;
  const double scale = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);

  Grid<double> out(grid.channels, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * static_cast<double>(ch) / h - 0.5, 0.0, ch - 1.0);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, ch - 1);
    const double fy = sy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xs = flip ? w - 1 - x : x;
      const double sx = std::clamp((xs + 0.5) * static_cast<double>(cw) / w - 0.5, 0.0, cw - 1.0);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, cw - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < grid.channels; ++c) {
        const double v00 = grid.at(c, oy + y0, ox + x0);
        const double v01 = grid.at(c, oy + y0, ox + x1);
        const double v10 = grid.at(c, oy + y1, ox + x0);
        const double v11 = grid.at(c, oy + y1, ox + x1);
        const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        out.at(c, y, x) = scale * v;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

const Mlp& Encoder::trunk(RepKind k) const {
  return trunks.size() == 1 ? trunks.front() : trunks[static_cast<std::size_t>(k)];
}
Mlp& Encoder::trunk(RepKind k) { return trunks.size() == 1 ? trunks.front() : trunks[static_cast<std::size_t>(k)]; }

double embedding_spread(const Matrix& z) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  if (n == 0 || d == 0) return 0.0;
  Matrix unit = z;
  for (std::size_t r = 0; r < n; ++r) {
    const double len = norm2(z.row(r));
    for (std::size_t j = 0; j < d; ++j) unit(r, j) = len > 0.0 ? z(r, j) / len : 0.0;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += unit(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (unit(r, j) - mean) * (unit(r, j) - mean);
    total += std::sqrt(var / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

namespace {

struct Model {
  Encoder encoder;
  SsmerHeads heads;

  /// Every trainable perceptron, in a fixed order.
  std::vector<Mlp*> parts() {
    std::vector<Mlp*> out;
    for (auto& a : encoder.adapters) out.push_back(&a);
    for (auto& t : encoder.trunks) out.push_back(&t);
    out.push_back(&heads.projector);
    out.push_back(&heads.predictor);
    return out;
  }
};

struct Branch {
  RepKind kind;
  MlpCache adapter, trunk;
  HeadsOutput heads;
};

Matrix flatten_batch(std::span<const RepresentationTriple> data, std::span<const std::size_t> ids, RepKind kind,
                     Rng& rng, const AugmentConfig& aug) {
  const auto& first = data[ids[0]][kind];
  Matrix x(ids.size(), first.values.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const Grid<double> view = augment(data[ids[r]][kind], rng, aug);
    std::copy(view.values.begin(), view.values.end(), x.row(r).begin());
  }
  return x;
}

Branch run_branch(const Model& m, RepKind kind, const Matrix& x, bool use_predictor) {
  Branch b{kind, {}, {}, {}};
  const auto k = static_cast<std::size_t>(kind);
  b.adapter = mlp_forward(m.encoder.adapters[k], x, Mode::train);
  b.trunk = mlp_forward(m.encoder.trunk(kind), b.adapter.output, Mode::train);
  if (use_predictor) {
    b.heads = heads_forward(b.trunk.output, m.heads, Mode::train);
  } else {
    b.heads.projector_cache = mlp_forward(m.heads.projector, b.trunk.output, Mode::train);
    b.heads.z = b.heads.projector_cache.output;
    b.heads.p = b.heads.z;
  }
  return b;
}

void backprop_branch(const Model& m, Model& g, const Branch& b, const Matrix& d_z, const Matrix& d_p,
                     bool use_predictor) {
  Matrix dz = d_z;
  if (use_predictor) {
    dz += mlp_backward(m.heads.predictor, b.heads.predictor_cache, d_p, g.heads.predictor);
  } else {
    dz += d_p;
  }
  const Matrix dh = mlp_backward(m.heads.projector, b.heads.projector_cache, dz, g.heads.projector);
  const auto k = static_cast<std::size_t>(b.kind);
  const Matrix da = mlp_backward(m.encoder.trunk(b.kind), b.trunk, dh, g.encoder.trunk(b.kind));
  mlp_backward(m.encoder.adapters[k], b.adapter, da, g.encoder.adapters[k]);
}

struct StepResult {
  double loss = 0.0;
  std::array<double, 3> pair_losses{};
  double spread = 0.0;
  std::vector<Branch> branches;
  std::array<BranchGradients, 3> grads;
};

StepResult run_step(const Model& m, std::span<const RepresentationTriple> data, std::span<const std::size_t> ids,
                    Rng& rng, const TrainConfig& cfg, bool with_grads) {
  StepResult res;
  std::array<BranchOutputs, 3> outs;
  for (std::size_t pi = 0; pi < 3; ++pi) {
    const auto [a, b] = kRepresentationPairs[pi];
    const Matrix x1 = flatten_batch(data, ids, a, rng, cfg.augment);
    const Matrix x2 = flatten_batch(data, ids, b, rng, cfg.augment);
    res.branches.push_back(run_branch(m, a, x1, cfg.use_predictor));
    res.branches.push_back(run_branch(m, b, x2, cfg.use_predictor));
    const auto& b1 = res.branches[2 * pi].heads;
    const auto& b2 = res.branches[2 * pi + 1].heads;
    outs[pi] = {b1.z, b2.z, b1.p, b2.p};
    res.pair_losses[pi] = symmetric_pair_loss(outs[pi]);
    res.loss += res.pair_losses[pi];
    res.spread += (embedding_spread(b1.z) + embedding_spread(b2.z)) / 6.0;
  }
  if (with_grads) res.grads = multi_rep_loss_grad(outs, cfg.stop_gradient);
  return res;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch));
  }
  // Batch norm needs at least two rows; fold a lone leftover into its neighbour.
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

void sgd_update(Mlp& p, const Mlp& g, Mlp& v, const TrainConfig& cfg) {
  auto step = [&](double& w, double grad, double& vel) {
    vel = cfg.momentum * vel + grad + cfg.weight_decay * w;
    w -= cfg.lr * vel;
  };
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    Stage& ps = p.stages[s];
    const Stage& gs = g.stages[s];
    Stage& vs = v.stages[s];
    for (std::size_t i = 0; i < ps.w.size(); ++i) step(ps.w.data()[i], gs.w.data()[i], vs.w.data()[i]);
    for (std::size_t i = 0; i < ps.b.size(); ++i) step(ps.b[i], gs.b[i], vs.b[i]);
    for (std::size_t i = 0; i < ps.gamma.size(); ++i) step(ps.gamma[i], gs.gamma[i], vs.gamma[i]);
    for (std::size_t i = 0; i < ps.beta.size(); ++i) step(ps.beta[i], gs.beta[i], vs.beta[i]);
  }
}

Model zeros_like(Model& m) {
  Model z;
  for (std::size_t i = 0; i < 3; ++i) z.encoder.adapters[i] = m.encoder.adapters[i].zeros_like();
  for (const auto& t : m.encoder.trunks) z.encoder.trunks.push_back(t.zeros_like());
  z.heads.projector = m.heads.projector.zeros_like();
  z.heads.predictor = m.heads.predictor.zeros_like();
  return z;
}

EpochStats monitor(const Model& m, std::span<const RepresentationTriple> data, const TrainConfig& cfg,
                   std::size_t epoch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);
  EpochStats st;
  st.epoch = epoch;
  const auto batches = make_batches(order, cfg.batch);
  for (const auto& ids : batches) {
    const StepResult r = run_step(m, data, ids, rng, cfg, false);
    st.loss += r.loss;
    for (std::size_t i = 0; i < 3; ++i) st.pair_losses[i] += r.pair_losses[i];
    st.spread += r.spread;
  }
  const double nb = static_cast<double>(batches.size());
  st.loss /= nb;
  for (double& v : st.pair_losses) v /= nb;
  st.spread /= nb;
  if (!std::isfinite(st.loss)) throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
  return st;
}

}  // namespace

TrainResult train_toy(std::span<const RepresentationTriple> data, const TrainConfig& cfg) {
  if (data.size() < 2) throw ParameterError("train_toy needs at least 2 windows");
  if (cfg.batch < 2) throw ParameterError("train_toy: batch size must be at least 2");
  if (!(cfg.lr >= 0.0) || !(cfg.momentum >= 0.0)) throw ParameterError("train_toy: lr and momentum must be >= 0");
  for (const auto& t : data) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (t.grids[k].values.size() != data[0].grids[k].values.size()) {
        throw ShapeError("train_toy: every window must share one grid geometry");
      }
    }
  }

  Rng rng(cfg.seed);
  Model model;
  for (std::size_t k = 0; k < 3; ++k) {
    model.encoder.adapters[k].stages.push_back(
        make_stage(data[0].grids[k].values.size(), cfg.hidden, false, true, rng));
  }
  const std::size_t trunks = cfg.shared_trunk ? 1 : 3;
  for (std::size_t t = 0; t < trunks; ++t) {
    Mlp trunk;
    trunk.stages.push_back(make_stage(cfg.hidden, cfg.hidden, false, true, rng));
    model.encoder.trunks.push_back(std::move(trunk));
  }
  model.heads = SsmerHeads::create(cfg.hidden, cfg.hidden, cfg.embed_dim, cfg.predictor_hidden, rng);
  Model velocity = zeros_like(model);

  TrainResult result;
  auto checked_monitor = [&](std::size_t epoch) {
    try {
      return monitor(model, data, cfg, epoch);
    } catch (const NumericError& e) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
  };
  result.trajectory.push_back(checked_monitor(0));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (const auto& ids : make_batches(order, cfg.batch)) {
      StepResult step;
      try {
        step = run_step(model, data, ids, rng, cfg, true);
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(step.loss)) throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
      Model grads = zeros_like(model);
      for (std::size_t pi = 0; pi < 3; ++pi) {
        const auto& g = step.grads[pi];
        backprop_branch(model, grads, step.branches[2 * pi], g.d_z1, g.d_p1, cfg.use_predictor);
        backprop_branch(model, grads, step.branches[2 * pi + 1], g.d_z2, g.d_p2, cfg.use_predictor);
      }
      auto params = model.parts();
      auto gparts = grads.parts();
      auto vparts = velocity.parts();
      for (std::size_t i = 0; i < params.size(); ++i) sgd_update(*params[i], *gparts[i], *vparts[i], cfg);
      for (const Branch& b : step.branches) {
        update_running_stats(model.heads.projector, b.heads.projector_cache);
        if (cfg.use_predictor) update_running_stats(model.heads.predictor, b.heads.predictor_cache);
      }
    }
    result.trajectory.push_back(checked_monitor(epoch));
  }
  return result;
}

}  // namespace evlign
