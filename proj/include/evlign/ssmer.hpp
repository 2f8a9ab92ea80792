#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evlign/event_core.hpp"
#include "evlign/matrix.hpp"
#include "evlign/random.hpp"
#include "evlign/representations.hpp"

namespace evlign {

// ---------------------------------------------------------------------------
// Losses

/// -(p/|p|) . (z/|z|). Throws NumericError if either vector has zero norm.
double cosine_distance(std::span<const double> p, std::span<const double> z);

/// d cosine_distance / d p.
std::vector<double> cosine_distance_grad(std::span<const double> p, std::span<const double> z);

/// Projector outputs z and predictor outputs p of the two views; batch x D.
/// A single sample is a 1 x D batch.
struct BranchOutputs {
  Matrix z1, z2, p1, p2;
};

/// Batch mean of 1/2 D(p1, z2) + 1/2 D(p2, z1).
double symmetric_pair_loss(const BranchOutputs& b);

struct BranchGradients {
  Matrix d_z1, d_z2, d_p1, d_p2;
};

/// Gradients of symmetric_pair_loss. With stop_gradient the z branches are
/// constants and d_z1, d_z2 come back zero.
BranchGradients symmetric_pair_loss_grad(const BranchOutputs& b, bool stop_gradient = true);

/// Sum of the three pair losses, in [-3, 3].
double multi_rep_loss(std::span<const BranchOutputs, 3> pairs);
std::array<BranchGradients, 3> multi_rep_loss_grad(std::span<const BranchOutputs, 3> pairs,
                                                   bool stop_gradient = true);

// ---------------------------------------------------------------------------
// Perceptron stages

enum class Mode { train, eval };

/// x W + b, optionally batch-normalised and rectified.
struct Stage {
  Matrix w;  ///< in x out
  std::vector<double> b;
  bool batch_norm = false;
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  bool relu = false;

  std::size_t in_dim() const { return w.rows(); }
  std::size_t out_dim() const { return w.cols(); }
};

struct Mlp {
  std::vector<Stage> stages;

  std::size_t in_dim() const { return stages.front().in_dim(); }
  std::size_t out_dim() const { return stages.back().out_dim(); }
  /// Same structure, every value zero (gradient accumulator).
  Mlp zeros_like() const;
};

/// He-initialised stage with zero bias; batch norm starts at gamma 1, beta 0
/// and unit running statistics.
Stage make_stage(std::size_t in, std::size_t out, bool batch_norm, bool relu, Rng& rng);

inline constexpr double kBatchNormVarianceFloor = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct MlpCache {
  std::vector<Matrix> inputs;    ///< input of each stage
  std::vector<Matrix> affine;    ///< x W + b
  std::vector<Matrix> xhat;      ///< normalised (batch-norm stages)
  std::vector<std::vector<double>> inv_std;
  std::vector<std::vector<double>> batch_mean, batch_var;
  std::vector<std::vector<bool>> floored;
  std::vector<Matrix> pre_relu;  ///< after batch norm
  Matrix output;
  Mode mode = Mode::train;
};

/// Train mode normalises with batch statistics (batch >= 2 for any stage with
/// batch norm), eval mode with the running statistics. Variance is floored
/// at kBatchNormVarianceFloor, so a constant batch maps to the shift beta.
MlpCache mlp_forward(const Mlp& mlp, const Matrix& x, Mode mode);
/// Accumulates parameter gradients into `grads` and returns dL/dx.
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& d_out, Mlp& grads);
/// Exponential moving average of the batch statistics recorded in `cache`.
void update_running_stats(Mlp& mlp, const MlpCache& cache);

// ---------------------------------------------------------------------------
// Heads

/// Projector: 2 x (linear, batch norm, ReLU) then linear to D.
/// Predictor: 2 x (linear, batch norm, ReLU).
struct SsmerHeads {
  Mlp projector;
  Mlp predictor;

  static SsmerHeads create(std::size_t in_dim, std::size_t hidden, std::size_t embed_dim,
                           std::size_t predictor_hidden, Rng& rng);
};

struct HeadsOutput {
  Matrix z;
  Matrix p;
  MlpCache projector_cache;
  MlpCache predictor_cache;
};

/// z = projector(x), p = predictor(z). Throws ParameterError for a batch of
/// one in train mode.
HeadsOutput heads_forward(const Matrix& x, const SsmerHeads& heads, Mode mode);

// ---------------------------------------------------------------------------
// Representation data and augmentation

enum class RepKind : std::size_t { frame = 0, voxel = 1, timesurface = 2 };
inline constexpr std::array<std::pair<RepKind, RepKind>, 3> kRepresentationPairs{{
    {RepKind::frame, RepKind::voxel},
    {RepKind::voxel, RepKind::timesurface},
    {RepKind::timesurface, RepKind::frame},
}};
std::string to_string(RepKind k);

/// The three normalised grids of one event window.
struct RepresentationTriple {
  std::array<Grid<double>, 3> grids;

  const Grid<double>& operator[](RepKind k) const { return grids[static_cast<std::size_t>(k)]; }
};

RepresentationTriple build_triple(const EventStream& window, std::size_t bins = kDefaultVoxelBins);

/// Builds every window's triple, in parallel, in input order.
std::vector<RepresentationTriple> build_triples(std::span<const EventStream> windows,
                                                std::size_t bins = kDefaultVoxelBins);

/// Moving bright blobs on a small sensor, run through the simulator.
std::vector<EventStream> make_synthetic_windows(std::size_t count, SensorGeometry geometry,
                                                std::uint64_t seed);

struct AugmentConfig {
  double min_crop_scale = 0.6;  ///< crop side as a fraction of the grid side
  double flip_probability = 0.5;
  double jitter = 0.2;          ///< scale factor drawn from [1 - jitter, 1 + jitter]
};

/// Random crop resized back bilinearly, horizontal flip, global scale jitter.
Grid<double> augment(const Grid<double>& grid, Rng& rng, const AugmentConfig& cfg = {});

// ---------------------------------------------------------------------------
// Toy trainer

struct Encoder {
  std::array<Mlp, 3> adapters;  ///< flattened grid -> hidden, one per representation
  std::vector<Mlp> trunks;      ///< one shared trunk, or one per representation

  const Mlp& trunk(RepKind k) const;
  Mlp& trunk(RepKind k);
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 3;
  std::size_t hidden = 64;           ///< encoder width and projector hidden width
  std::size_t embed_dim = 32;        ///< D
  std::size_t predictor_hidden = 16;
  bool shared_trunk = true;
  bool stop_gradient = true;
  bool use_predictor = true;         ///< false: p = z (symmetric heads)
  AugmentConfig augment;
};

struct EpochStats {
  std::size_t epoch = 0;  ///< 0 = before any update
  double loss = 0.0;      ///< L_MR
  std::array<double, 3> pair_losses{};
  double spread = 0.0;    ///< mean per-dim std of normalised z across the batch
};

struct TrainResult {
  std::vector<EpochStats> trajectory;  ///< epochs + 1 entries
};

/// Per-dimension standard deviation of the L2-normalised rows of z, averaged
/// over dimensions. Collapsed embeddings give 0; spread-out ones about 1/sqrt(D).
double embedding_spread(const Matrix& z);

/// Momentum SGD on L_MR. Each epoch is followed by a monitoring pass over the
/// whole set with fixed augmentations and batch statistics, which is what the
/// trajectory reports, so a zero learning rate yields a flat trajectory.
/// Throws TrainingError when the loss stops being finite.
TrainResult train_toy(std::span<const RepresentationTriple> data, const TrainConfig& cfg);

}  // namespace evlign
