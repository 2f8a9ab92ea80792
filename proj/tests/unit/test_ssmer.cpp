#include <doctest.h>

#include <cmath>

#include "evlign/error.hpp"
#include "evlign/ssmer.hpp"
#include "oracles.hpp"

using namespace evlign;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

BranchOutputs random_branch(Rng& rng, std::size_t batch, std::size_t d) {
  return {random_matrix(rng, batch, d), random_matrix(rng, batch, d), random_matrix(rng, batch, d),
          random_matrix(rng, batch, d)};
}

double hand_cos(std::span<const double> p, std::span<const double> z) {
  double dot = 0.0, np = 0.0, nz = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dot += p[i] * z[i];
    np += p[i] * p[i];
    nz += z[i] * z[i];
  }
  return -dot / std::sqrt(np * nz);
}

/// Straight-line forward of one stage with batch statistics or running stats.
Matrix hand_stage(const Matrix& x, const Stage& s, bool train) {
  Matrix a = oracle::naive_matmul(x, s.w);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < a.cols(); ++j) a(r, j) += s.b[j];
  }
  if (s.batch_norm) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double mean = s.running_mean[j], var = s.running_var[j];
      if (train) {
        mean = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) mean += a(r, j) / a.rows();
        var = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) var += (a(r, j) - mean) * (a(r, j) - mean) / a.rows();
      }
      for (std::size_t r = 0; r < a.rows(); ++r) {
        a(r, j) = s.gamma[j] * (a(r, j) - mean) / std::sqrt(std::max(var, 1e-5)) + s.beta[j];
      }
    }
  }
  if (s.relu) {
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  }
  return a;
}

}  // namespace

TEST_CASE("cosine distance examples") {
  const std::vector<double> p{1, 0}, z{1, 1}, q{0, 3};
  CHECK(std::abs(cosine_distance(p, z) + 1.0 / std::sqrt(2.0)) <= 1e-12);
  CHECK(cosine_distance(p, q) == 0.0);
  CHECK(std::abs(cosine_distance(z, z) + 1.0) <= 1e-12);
  const std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(cosine_distance(zero, z), NumericError);
}

TEST_CASE("cosine distance is scale invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(8), z(8);
    for (auto& v : p) v = rng.normal();
    for (auto& v : z) v = rng.normal();
    const double a = std::exp(rng.uniform(-5, 5)), b = std::exp(rng.uniform(-5, 5));
    auto ps = p, zs = z;
    for (auto& v : ps) v *= a;
    for (auto& v : zs) v *= b;
    CHECK(std::abs(cosine_distance(p, z) - cosine_distance(ps, zs)) <= 1e-9);
    CHECK(std::abs(cosine_distance(p, z) - hand_cos(p, z)) <= 1e-12);
  }
}

TEST_CASE("pair loss: aligned, orthogonal, per-sample oracle, swap symmetry") {
  const Matrix e1(1, 2, {1.0, 0.0}), e2(1, 2, {0.0, 1.0});
  CHECK(symmetric_pair_loss({e1, e2, e2, e1}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(symmetric_pair_loss({e1, e1, e2, e2}) == 0.0);
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = random_branch(rng, 1 + rng.below(9), 1 + rng.below(10));
    double ref = 0.0;
    for (std::size_t i = 0; i < b.z1.rows(); ++i) {
      ref += 0.5 * hand_cos(b.p1.row(i), b.z2.row(i)) + 0.5 * hand_cos(b.p2.row(i), b.z1.row(i));
    }
    ref /= static_cast<double>(b.z1.rows());
    CHECK(std::abs(symmetric_pair_loss(b) - ref) <= 1e-12);
    CHECK(std::abs(symmetric_pair_loss(b) - symmetric_pair_loss({b.z2, b.z1, b.p2, b.p1})) <= 1e-15);
  }
}

TEST_CASE("multi-representation loss") {
  Rng rng(3);
  const Matrix e1(1, 2, {1.0, 0.0}), e2(1, 2, {0.0, 1.0});
  const BranchOutputs aligned{e1, e2, e2, e1}, ortho{e1, e1, e2, e2};
  std::array<BranchOutputs, 3> all{aligned, aligned, aligned};
  CHECK(std::abs(multi_rep_loss(all) + 3.0) <= 1e-12);
  std::array<BranchOutputs, 3> one{aligned, ortho, ortho};
  CHECK(std::abs(multi_rep_loss(one) + 1.0) <= 1e-12);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<BranchOutputs, 3> r{random_branch(rng, 4, 6), random_branch(rng, 4, 6), random_branch(rng, 4, 6)};
    const double l = multi_rep_loss(r);
    CHECK(std::abs(l - (symmetric_pair_loss(r[0]) + symmetric_pair_loss(r[1]) + symmetric_pair_loss(r[2]))) <= 1e-12);
    CHECK(l >= -3.0);
    CHECK(l <= 3.0);
    CHECK(l > -3.0 + 1e-6);
  }
}

TEST_CASE("loss gradient w.r.t. p matches central differences; z held constant") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<BranchOutputs, 3> r{random_branch(rng, 3, 5), random_branch(rng, 3, 5), random_branch(rng, 3, 5)};
    const auto g = multi_rep_loss_grad(r, true);
    double worst = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      for (double v : g[k].d_z1.data()) CHECK(v == 0.0);
      for (double v : g[k].d_z2.data()) CHECK(v == 0.0);
      for (int which = 0; which < 2; ++which) {
        Matrix& p = which == 0 ? r[k].p1 : r[k].p2;
        const Matrix& d = which == 0 ? g[k].d_p1 : g[k].d_p2;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double keep = p.data()[i];
          p.data()[i] = keep + 1e-5;
          const double up = multi_rep_loss(r);
          p.data()[i] = keep - 1e-5;
          const double down = multi_rep_loss(r);
          p.data()[i] = keep;
          const double num = (up - down) / 2e-5;
          const double ana = d.data()[i];
          worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-3}));
        }
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("without stop-gradient the z gradients are nonzero and correct") {
  Rng rng(5);
  auto b = random_branch(rng, 2, 4);
  const auto g = symmetric_pair_loss_grad(b, false);
  for (std::size_t i = 0; i < b.z1.size(); ++i) {
    const double keep = b.z1.data()[i];
    b.z1.data()[i] = keep + 1e-6;
    const double up = symmetric_pair_loss(b);
    b.z1.data()[i] = keep - 1e-6;
    const double down = symmetric_pair_loss(b);
    b.z1.data()[i] = keep;
    CHECK(std::abs(g.d_z1.data()[i] - (up - down) / 2e-6) <= 1e-7);
  }
}

TEST_CASE("identity heads in eval mode pass x through a rectifier") {
  Rng rng(6);
  auto heads = SsmerHeads::create(4, 4, 4, 4, rng);
  for (Mlp* m : {&heads.projector, &heads.predictor}) {
    for (auto& s : m->stages) {
      s.w = Matrix::identity(4);
      std::fill(s.b.begin(), s.b.end(), 0.0);
    }
  }
  const Matrix x = random_matrix(rng, 3, 4);
  const auto out = heads_forward(x, heads, Mode::eval);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.z.data()[i] == std::max(x.data()[i], 0.0));
}

TEST_CASE("constant batch in train mode yields the batch-norm shift") {
  Rng rng(7);
  Mlp mlp;
  mlp.stages.push_back(make_stage(3, 5, true, false, rng));
  for (std::size_t j = 0; j < 5; ++j) mlp.stages[0].beta[j] = 0.1 * static_cast<double>(j) - 0.2;
  Matrix x(4, 3);
  for (std::size_t r = 0; r < 4; ++r) x.row(r)[0] = 1.0, x.row(r)[1] = -2.0, x.row(r)[2] = 0.5;
  const auto k = mlp_forward(mlp, x, Mode::train);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(k.output(r, j) - mlp.stages[0].beta[j]) <= 1e-12);
  }
}

TEST_CASE("heads match a layer-by-layer oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto heads = SsmerHeads::create(6, 10, 4, 3, rng);
    for (Mlp* m : {&heads.projector, &heads.predictor}) {
      for (auto& s : m->stages) {
        for (auto& v : s.b) v = rng.normal();
        for (auto& v : s.gamma) v = rng.uniform(0.5, 1.5);
        for (auto& v : s.beta) v = rng.normal() * 0.1;
        for (auto& v : s.running_mean) v = rng.normal();
        for (auto& v : s.running_var) v = rng.uniform(0.5, 2.0);
      }
    }
    const Matrix x = random_matrix(rng, 5, 6);
    for (bool train : {true, false}) {
      Matrix z = x;
      for (const auto& s : heads.projector.stages) z = hand_stage(z, s, train);
      Matrix p = z;
      for (const auto& s : heads.predictor.stages) p = hand_stage(p, s, train);
      const auto out = heads_forward(x, heads, train ? Mode::train : Mode::eval);
      for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(out.z.data()[i] - z.data()[i]) <= 1e-10);
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(out.p.data()[i] - p.data()[i]) <= 1e-10);
    }
  }
}

TEST_CASE("batch of one is rejected in train mode only") {
  Rng rng(9);
  const auto heads = SsmerHeads::create(4, 8, 4, 2, rng);
  const Matrix x = random_matrix(rng, 1, 4);
  CHECK_THROWS_AS(heads_forward(x, heads, Mode::train), ParameterError);
  CHECK_NOTHROW(heads_forward(x, heads, Mode::eval));
}

TEST_CASE("mlp backward matches central differences") {
  Rng rng(10);
  Mlp mlp;
  mlp.stages.push_back(make_stage(4, 6, true, true, rng));
  mlp.stages.push_back(make_stage(6, 3, false, false, rng));
  const Matrix x = random_matrix(rng, 5, 4);
  const Matrix g = random_matrix(rng, 5, 3);
  auto loss = [&](const Mlp& m, const Matrix& in) {
    const auto k = mlp_forward(m, in, Mode::train);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.data()[i] * k.output.data()[i];
    return s;
  };
  Mlp grads = mlp.zeros_like();
  const Matrix dx = mlp_backward(mlp, mlp_forward(mlp, x, Mode::train), g, grads);
  double worst = 0.0;
  auto compare = [&](double ana, double num) {
    worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-3}));
  };
  for (std::size_t si = 0; si < 2; ++si) {
    for (std::size_t i = 0; i < mlp.stages[si].w.size(); ++i) {
      Mlp m = mlp;
      m.stages[si].w.data()[i] += 1e-5;
      const double up = loss(m, x);
      m.stages[si].w.data()[i] -= 2e-5;
      compare(grads.stages[si].w.data()[i], (up - loss(m, x)) / 2e-5);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = x;
    xp.data()[i] += 1e-5;
    const double up = loss(mlp, xp);
    xp.data()[i] -= 2e-5;
    compare(dx.data()[i], (up - loss(mlp, xp)) / 2e-5);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("augmented views keep the shape and give finite losses") {
  const auto windows = make_synthetic_windows(8, {16, 16}, 1);
  const auto triples = build_triples(windows);
  Rng rng(11);
  for (const auto& t : triples) {
    for (const auto& g : t.grids) {
      const auto a = augment(g, rng);
      CHECK(a.channels == g.channels);
      CHECK(a.height == g.height);
      CHECK(a.width == g.width);
      for (double v : a.values) CHECK(std::isfinite(v));
    }
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 4;
  const auto r = train_toy(triples, cfg);
  for (const auto& e : r.trajectory) CHECK(std::isfinite(e.loss));
}

TEST_CASE("zero learning rate gives a flat trajectory") {
  const auto triples = build_triples(make_synthetic_windows(16, {12, 12}, 2));
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 8;
  cfg.lr = 0.0;
  const auto r = train_toy(triples, cfg);
  REQUIRE(r.trajectory.size() == 5);
  for (const auto& e : r.trajectory) CHECK(e.loss == r.trajectory.front().loss);
  const auto again = train_toy(triples, cfg);
  CHECK(again.trajectory.back().spread == r.trajectory.back().spread);
}

TEST_CASE("spread statistic") {
  Matrix same(4, 3);
  for (std::size_t r = 0; r < 4; ++r) same.row(r)[0] = 1.0 + r, same.row(r)[1] = 2.0 * (1.0 + r);
  CHECK(embedding_spread(same) <= 1e-15);
  const Matrix basis = Matrix::identity(4);
  // each column holds one 1 and three 0s: population std sqrt(3)/4
  CHECK(std::abs(embedding_spread(basis) - std::sqrt(3.0) / 4.0) <= 1e-12);
}
