#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evlign/matrix.hpp"

namespace evlign {

/// Which tensor CMFA and MCA attend over as values.
enum class ValueSource {
  input_embedding,  ///< the (normalised) landmark tokens; needs N == M
  rgb_features,     ///< the block's patch features (F_rgb for CMFA, F_evt for MCA)
};

/// Landmark tokens (N x C) plus the patch features and structure encodings
/// (M x C) the attention blocks read from.
struct Embeddings {
  Matrix tokens;           ///< T, N x C
  Matrix query;            ///< Q, N x C
  Matrix rgb_features;     ///< F_rgb, M x C
  Matrix rgb_structure;    ///< P_rgb, M x C
  Matrix event_features;   ///< F_evt, M x C
  Matrix event_structure;  ///< P_evt, M x C

  static Embeddings random(std::size_t n, std::size_t m, std::size_t c, std::uint64_t seed);
  /// Zero-filled with the same shapes as `like`.
  static Embeddings zeros_like(const Embeddings& like);
};

/// Per-head C_h x C_h projections.
struct HeadParams {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
};

/// One attention block: H heads, output projection W_P (C x C) and the layer
/// norm applied to its input.
struct BlockParams {
  std::vector<HeadParams> heads;
  Matrix w_p;
  std::vector<double> ln_gamma;
  std::vector<double> ln_beta;

  std::size_t channels() const { return w_p.rows(); }
  std::size_t head_dim() const { return heads.empty() ? 0 : heads.front().w_q.rows(); }
};

/// Parameters of one alignment layer: CMFA, then MSA, then MCA.
struct AttentionParams {
  BlockParams cmfa;
  BlockParams msa;
  BlockParams mca;
  ValueSource value_source = ValueSource::rgb_features;

  std::size_t channels() const { return cmfa.channels(); }
  std::size_t head_count() const { return cmfa.heads.size(); }

  /// Gaussian projections (std 1/sqrt(fan-in), times `scale`), layer-norm
  /// scale 1 + 0.1 n and shift 0.1 n.
  static AttentionParams random(std::size_t c, std::size_t heads, std::uint64_t seed,
                                double scale = 1.0);
  /// Every projection zero, layer norm identity (gamma 1, beta 0).
  static AttentionParams zeros(std::size_t c, std::size_t heads);
  static AttentionParams zeros_like(const AttentionParams& like);

  /// Throws ShapeError on inconsistent dimensions, NumericError on non-finite entries.
  void validate() const;
};

inline constexpr double kLayerNormVarianceFloor = 1e-5;

/// Row-wise layer norm over channels with a floored variance: a constant row
/// normalises to zero before the affine part.
Matrix layer_norm(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);
/// Vector-Jacobian product of softmax_rows: given A and dL/dA, returns dL/dlogits.
Matrix softmax_rows_backward(const Matrix& a, const Matrix& d_a);

/// A_h = softmax((T_h + Q_h) W_q ((F_rgb,h + P_rgb,h) W_k)^T / sqrt(C_h)).
Matrix cmfa_weights(const Embeddings& emb, const AttentionParams& params, std::size_t head);

/// [A_1 V_1 W_v^1; ...; A_H V_H W_v^H] W_P with V = T or F_rgb per value_source.
Matrix cmfa_forward(const Embeddings& emb, const AttentionParams& params);

/// T_prev + CMFA(LN(T_prev)). emb.tokens is ignored; T_prev takes its place.
Matrix cmfa_block(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& params);

struct LayerOutput {
  Matrix output;  ///< T'
  /// Per head weights of each block: CMFA and MCA are N x M, MSA is N x N.
  std::vector<Matrix> cmfa_maps;
  std::vector<Matrix> msa_maps;
  std::vector<Matrix> mca_maps;
};

/// T  = T_prev + CMFA(LN(T_prev))
/// S  = T + MSA(LN(T))
/// T' = S + MCA(LN(S))
/// MSA attends over the landmark tokens (query and key X + Q, value X); MCA
/// takes query X + Q, key F_evt + P_evt and values per value_source.
LayerOutput layer_forward(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& params);

/// Gradients of a scalar loss, shaped like the things they differentiate.
/// `inputs.tokens` holds dL/dT (or dL/dT_prev for the block and layer).
struct AttentionGradients {
  AttentionParams params;
  Embeddings inputs;
};

AttentionGradients cmfa_forward_backward(const Embeddings& emb, const AttentionParams& params,
                                         const Matrix& d_out);
AttentionGradients cmfa_block_backward(const Matrix& t_prev, const Embeddings& emb,
                                       const AttentionParams& params, const Matrix& d_out);
AttentionGradients layer_backward(const Matrix& t_prev, const Embeddings& emb,
                                  const AttentionParams& params, const Matrix& d_out);

enum class GradCheckTarget {
  output_projection,  ///< W_P of cmfa_forward only (a linear map)
  cmfa_forward,
  cmfa_block,
  layer_forward,
};

struct GradCheckConfig {
  std::size_t tokens = 3;   ///< N
  std::size_t patches = 4;  ///< M
  std::size_t channels = 8;
  std::size_t heads = 2;
  ValueSource value_source = ValueSource::rgb_features;
  double step = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;  ///< scalars compared
  std::string worst;        ///< name of the worst scalar
};

/// Relative error |a - n| / max(|a|, |n|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-3;

/// Compares the hand-derived backward pass against central differences on
/// every parameter and input scalar of the chosen forward, for the scalar
/// loss sum(G .* Y) with a seeded random G. Throws NumericError if any
/// gradient is non-finite.
GradCheckReport grad_check(GradCheckTarget target, const GradCheckConfig& cfg);

/// Builds the Jacobian of one random softmax row column by column from
/// softmax_rows_backward and returns its max abs deviation from diag(a) - a a^T.
double softmax_jacobian_check(std::size_t width, std::uint64_t seed);

std::string to_string(ValueSource v);
ValueSource value_source_from_string(const std::string& s);
std::string to_string(GradCheckTarget t);
GradCheckTarget grad_check_target_from_string(const std::string& s);

}  // namespace evlign
