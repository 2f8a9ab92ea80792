#include "evlign/attention.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "evlign/error.hpp"
#include "evlign/random.hpp"

namespace evlign {

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double stddev) {
  Matrix m(r, c);
  for (double& v : m.data()) v = stddev * rng.normal();
  return m;
}

BlockParams random_block(Rng& rng, std::size_t c, std::size_t heads, double scale) {
  const std::size_t ch = c / heads;
  BlockParams b;
  const double head_std = scale / std::sqrt(static_cast<double>(ch));
  for (std::size_t h = 0; h < heads; ++h) {
    b.heads.push_back({random_matrix(rng, ch, ch, head_std), random_matrix(rng, ch, ch, head_std),
                       random_matrix(rng, ch, ch, head_std)});
  }
  b.w_p = random_matrix(rng, c, c, scale / std::sqrt(static_cast<double>(c)));
  for (std::size_t i = 0; i < c; ++i) {
    b.ln_gamma.push_back(1.0 + 0.1 * rng.normal());
    b.ln_beta.push_back(0.1 * rng.normal());
  }
  return b;
}

BlockParams zero_block(std::size_t c, std::size_t heads) {
  const std::size_t ch = c / heads;
  BlockParams b;
  for (std::size_t h = 0; h < heads; ++h) b.heads.push_back({Matrix(ch, ch), Matrix(ch, ch), Matrix(ch, ch)});
  b.w_p = Matrix(c, c);
  b.ln_gamma.assign(c, 1.0);
  b.ln_beta.assign(c, 0.0);
  return b;
}

BlockParams zero_block_like(const BlockParams& like) {
  BlockParams b;
  for (const auto& h : like.heads) {
    b.heads.push_back({Matrix(h.w_q.rows(), h.w_q.cols()), Matrix(h.w_k.rows(), h.w_k.cols()),
                       Matrix(h.w_v.rows(), h.w_v.cols())});
  }
  b.w_p = Matrix(like.w_p.rows(), like.w_p.cols());
  b.ln_gamma.assign(like.ln_gamma.size(), 0.0);
  b.ln_beta.assign(like.ln_beta.size(), 0.0);
  return b;
}

void check_heads(std::size_t c, std::size_t heads) {
  if (heads == 0 || c == 0 || c % heads != 0) {
    throw ShapeError("channel count " + std::to_string(c) + " must be a positive multiple of head count " +
                     std::to_string(heads));
  }
}

void validate_block(const BlockParams& b, std::size_t c, std::size_t heads, const char* name) {
  const std::string where = std::string(name) + ": ";
  if (b.heads.size() != heads) throw ShapeError(where + "head count differs between blocks");
  if (b.w_p.rows() != c || b.w_p.cols() != c) throw ShapeError(where + "W_P must be C x C");
  if (b.ln_gamma.size() != c || b.ln_beta.size() != c) throw ShapeError(where + "layer norm size must be C");
  const std::size_t ch = c / heads;
  for (const auto& h : b.heads) {
    for (const Matrix* w : {&h.w_q, &h.w_k, &h.w_v}) {
      if (w->rows() != ch || w->cols() != ch) throw ShapeError(where + "head projections must be C_h x C_h");
      if (!w->all_finite()) throw NumericError(where + "non-finite head projection");
    }
  }
  if (!b.w_p.all_finite()) throw NumericError(where + "non-finite W_P");
  for (std::size_t i = 0; i < c; ++i) {
    if (!std::isfinite(b.ln_gamma[i]) || !std::isfinite(b.ln_beta[i])) {
      throw NumericError(where + "non-finite layer norm parameter");
    }
  }
}

void check_input(const Matrix& m, std::size_t rows, std::size_t c, const char* name) {
  if (m.rows() != rows || m.cols() != c) {
    throw ShapeError(std::string(name) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ", expected " + std::to_string(rows) + "x" + std::to_string(c));
  }
  if (!m.all_finite()) throw NumericError(std::string(name) + " has non-finite entries");
}

/// Shapes of T, Q and the patch tensors agree with the params.
void validate_embeddings(const Embeddings& emb, const AttentionParams& p, bool need_tokens) {
  const std::size_t c = p.channels();
  const std::size_t n = emb.query.rows();
  const std::size_t m = emb.rgb_features.rows();
  if (need_tokens) check_input(emb.tokens, n, c, "T");
  check_input(emb.query, n, c, "Q");
  check_input(emb.rgb_features, m, c, "F_rgb");
  check_input(emb.rgb_structure, m, c, "P_rgb");
  if (!emb.event_features.empty() || !emb.event_structure.empty()) {
    check_input(emb.event_features, emb.event_features.rows(), c, "F_evt");
    check_input(emb.event_structure, emb.event_features.rows(), c, "P_evt");
  }
}

// ---------------------------------------------------------------------------
// Layer norm

struct NormCache {
  Matrix xhat;
  std::vector<double> inv_std;
  std::vector<bool> floored;
  Matrix out;
};

NormCache norm_forward(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  const std::size_t c = x.cols();
  NormCache k{Matrix(x.rows(), c), std::vector<double>(x.rows()), std::vector<bool>(x.rows()),
              Matrix(x.rows(), c)};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    k.floored[r] = var < kLayerNormVarianceFloor;
    k.inv_std[r] = 1.0 / std::sqrt(std::max(var, kLayerNormVarianceFloor));
    for (std::size_t j = 0; j < c; ++j) {
      k.xhat(r, j) = (x(r, j) - mean) * k.inv_std[r];
      k.out(r, j) = gamma[j] * k.xhat(r, j) + beta[j];
    }
  }
  return k;
}

Matrix norm_backward(const NormCache& k, const std::vector<double>& gamma, const Matrix& d_out,
                     std::vector<double>& d_gamma, std::vector<double>& d_beta) {
  const std::size_t c = d_out.cols();
  const double inv_c = 1.0 / static_cast<double>(c);
  Matrix dx(d_out.rows(), c);
  std::vector<double> dxhat(c);
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      d_gamma[j] += d_out(r, j) * k.xhat(r, j);
      d_beta[j] += d_out(r, j);
      dxhat[j] = d_out(r, j) * gamma[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * k.xhat(r, j);
    }
    mean_d *= inv_c;
    mean_dx *= inv_c;
    // Below the floor the denominator is a constant, so only the mean path remains.
    if (k.floored[r]) mean_dx = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dx(r, j) = k.inv_std[r] * (dxhat[j] - mean_d - k.xhat(r, j) * mean_dx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention with contiguous head slicing

struct AttendCache {
  Matrix q_in, k_in, v_in;
  std::vector<Matrix> q_proj, k_proj, v_proj, weights;
  Matrix concat;
  Matrix out;
};

AttendCache attend(const Matrix& q_in, const Matrix& k_in, const Matrix& v_in, const BlockParams& p) {
  if (k_in.rows() != v_in.rows()) {
    throw ShapeError("value rows (" + std::to_string(v_in.rows()) + ") must match key rows (" +
                     std::to_string(k_in.rows()) + ")");
  }
  const std::size_t heads = p.heads.size();
  const std::size_t ch = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ch));
  AttendCache k{q_in, k_in, v_in, {}, {}, {}, {}, Matrix(q_in.rows(), p.channels()), {}};
  for (std::size_t h = 0; h < heads; ++h) {
    const auto& hp = p.heads[h];
    k.q_proj.push_back(matmul(q_in.col_block(h * ch, ch), hp.w_q));
    k.k_proj.push_back(matmul(k_in.col_block(h * ch, ch), hp.w_k));
    k.v_proj.push_back(matmul(v_in.col_block(h * ch, ch), hp.w_v));
    k.weights.push_back(softmax_rows(matmul_nt(k.q_proj[h], k.k_proj[h]) * inv_sqrt));
    k.concat.set_col_block(h * ch, matmul(k.weights[h], k.v_proj[h]));
  }
  k.out = matmul(k.concat, p.w_p);
  return k;
}

struct AttendGrads {
  Matrix d_q_in, d_k_in, d_v_in;
};

AttendGrads attend_backward(const AttendCache& k, const BlockParams& p, const Matrix& d_out, BlockParams& g) {
  const std::size_t ch = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ch));
  g.w_p += matmul_tn(k.concat, d_out);
  const Matrix d_concat = matmul_nt(d_out, p.w_p);
  AttendGrads out{Matrix(k.q_in.rows(), k.q_in.cols()), Matrix(k.k_in.rows(), k.k_in.cols()),
                  Matrix(k.v_in.rows(), k.v_in.cols())};
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    const auto& hp = p.heads[h];
    auto& hg = g.heads[h];
    const Matrix d_head = d_concat.col_block(h * ch, ch);
    const Matrix d_weights = matmul_nt(d_head, k.v_proj[h]);
    const Matrix d_v_proj = matmul_tn(k.weights[h], d_head);
    const Matrix d_logits = softmax_rows_backward(k.weights[h], d_weights) * inv_sqrt;
    const Matrix d_q_proj = matmul(d_logits, k.k_proj[h]);
    const Matrix d_k_proj = matmul_tn(d_logits, k.q_proj[h]);

    hg.w_q += matmul_tn(k.q_in.col_block(h * ch, ch), d_q_proj);
    hg.w_k += matmul_tn(k.k_in.col_block(h * ch, ch), d_k_proj);
    hg.w_v += matmul_tn(k.v_in.col_block(h * ch, ch), d_v_proj);
    out.d_q_in.add_col_block(h * ch, matmul_nt(d_q_proj, hp.w_q));
    out.d_k_in.add_col_block(h * ch, matmul_nt(d_k_proj, hp.w_k));
    out.d_v_in.add_col_block(h * ch, matmul_nt(d_v_proj, hp.w_v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block wiring

const Matrix& value_for(ValueSource vs, const Matrix& tokens, const Matrix& features) {
  if (vs == ValueSource::input_embedding) {
    if (tokens.rows() != features.rows()) {
      throw ShapeError("value_source=input_embedding needs N == M (got N=" + std::to_string(tokens.rows()) +
                       ", M=" + std::to_string(features.rows()) + ")");
    }
    return tokens;
  }
  return features;
}

void route_value_grad(ValueSource vs, const Matrix& d_v, Matrix& d_tokens, Matrix& d_features) {
  if (vs == ValueSource::input_embedding) {
    d_tokens += d_v;
  } else {
    d_features += d_v;
  }
}

/// CMFA on already-normalised tokens x.
AttendCache cmfa_attend(const Matrix& x, const Embeddings& emb, const AttentionParams& p) {
  return attend(x + emb.query, emb.rgb_features + emb.rgb_structure,
                value_for(p.value_source, x, emb.rgb_features), p.cmfa);
}

/// Backward of cmfa_attend; accumulates into g and returns dL/dx.
Matrix cmfa_attend_backward(const AttendCache& k, const AttentionParams& p, const Matrix& d_out,
                            AttentionGradients& g) {
  const AttendGrads d = attend_backward(k, p.cmfa, d_out, g.params.cmfa);
  Matrix d_x = d.d_q_in;
  g.inputs.query += d.d_q_in;
  g.inputs.rgb_features += d.d_k_in;
  g.inputs.rgb_structure += d.d_k_in;
  route_value_grad(p.value_source, d.d_v_in, d_x, g.inputs.rgb_features);
  return d_x;
}

AttendCache msa_attend(const Matrix& x, const Embeddings& emb, const AttentionParams& p) {
  const Matrix qk = x + emb.query;
  return attend(qk, qk, x, p.msa);
}

Matrix msa_attend_backward(const AttendCache& k, const AttentionParams& p, const Matrix& d_out,
                           AttentionGradients& g) {
  const AttendGrads d = attend_backward(k, p.msa, d_out, g.params.msa);
  Matrix d_qk = d.d_q_in + d.d_k_in;
  g.inputs.query += d_qk;
  return d_qk + d.d_v_in;
}

AttendCache mca_attend(const Matrix& x, const Embeddings& emb, const AttentionParams& p) {
  return attend(x + emb.query, emb.event_features + emb.event_structure,
                value_for(p.value_source, x, emb.event_features), p.mca);
}

Matrix mca_attend_backward(const AttendCache& k, const AttentionParams& p, const Matrix& d_out,
                           AttentionGradients& g) {
  const AttendGrads d = attend_backward(k, p.mca, d_out, g.params.mca);
  Matrix d_x = d.d_q_in;
  g.inputs.query += d.d_q_in;
  g.inputs.event_features += d.d_k_in;
  g.inputs.event_structure += d.d_k_in;
  route_value_grad(p.value_source, d.d_v_in, d_x, g.inputs.event_features);
  return d_x;
}

/// Everything layer_backward needs from the forward pass.
struct LayerCache {
  NormCache norm_c;
  AttendCache cmfa;
  Matrix t1;
  NormCache norm_s;
  AttendCache msa;
  Matrix s;
  NormCache norm_m;
  AttendCache mca;
  Matrix out;
};

LayerCache layer_cached(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& p) {
  LayerCache k;
  k.norm_c = norm_forward(t_prev, p.cmfa.ln_gamma, p.cmfa.ln_beta);
  k.cmfa = cmfa_attend(k.norm_c.out, emb, p);
  k.t1 = t_prev + k.cmfa.out;
  k.norm_s = norm_forward(k.t1, p.msa.ln_gamma, p.msa.ln_beta);
  k.msa = msa_attend(k.norm_s.out, emb, p);
  k.s = k.t1 + k.msa.out;
  k.norm_m = norm_forward(k.s, p.mca.ln_gamma, p.mca.ln_beta);
  k.mca = mca_attend(k.norm_m.out, emb, p);
  k.out = k.s + k.mca.out;
  return k;
}

void check_layer_inputs(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& p, bool need_events) {
  p.validate();
  validate_embeddings(emb, p, false);
  check_input(t_prev, emb.query.rows(), p.channels(), "T_prev");
  if (need_events) {
    check_input(emb.event_features, emb.event_features.rows(), p.channels(), "F_evt");
    if (emb.event_features.rows() == 0) throw ShapeError("F_evt must have at least one row");
  }
}

AttentionGradients zero_grads(const Embeddings& emb, const AttentionParams& p, const Matrix& tokens_like) {
  AttentionGradients g{AttentionParams::zeros_like(p), Embeddings::zeros_like(emb)};
  g.inputs.tokens = Matrix(tokens_like.rows(), tokens_like.cols());
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------

Embeddings Embeddings::random(std::size_t n, std::size_t m, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Embeddings e;
  e.tokens = random_matrix(rng, n, c, 1.0);
  e.query = random_matrix(rng, n, c, 1.0);
  e.rgb_features = random_matrix(rng, m, c, 1.0);
  e.rgb_structure = random_matrix(rng, m, c, 1.0);
  e.event_features = random_matrix(rng, m, c, 1.0);
  e.event_structure = random_matrix(rng, m, c, 1.0);
  return e;
}

Embeddings Embeddings::zeros_like(const Embeddings& like) {
  auto z = [](const Matrix& m) { return Matrix(m.rows(), m.cols()); };
  return {z(like.tokens),       z(like.query),          z(like.rgb_features),
          z(like.rgb_structure), z(like.event_features), z(like.event_structure)};
}

AttentionParams AttentionParams::random(std::size_t c, std::size_t heads, std::uint64_t seed, double scale) {
  check_heads(c, heads);
  Rng rng(seed);
  AttentionParams p;
  p.cmfa = random_block(rng, c, heads, scale);
  p.msa = random_block(rng, c, heads, scale);
  p.mca = random_block(rng, c, heads, scale);
  return p;
}

AttentionParams AttentionParams::zeros(std::size_t c, std::size_t heads) {
  check_heads(c, heads);
  return {zero_block(c, heads), zero_block(c, heads), zero_block(c, heads), ValueSource::rgb_features};
}

AttentionParams AttentionParams::zeros_like(const AttentionParams& like) {
  return {zero_block_like(like.cmfa), zero_block_like(like.msa), zero_block_like(like.mca), like.value_source};
}

void AttentionParams::validate() const {
  const std::size_t c = channels();
  const std::size_t heads = head_count();
  check_heads(c, heads);
  validate_block(cmfa, c, heads, "cmfa");
  validate_block(msa, c, heads, "msa");
  validate_block(mca, c, heads, "mca");
}

Matrix layer_norm(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) throw ShapeError("layer_norm: parameter size");
  return norm_forward(x, gamma, beta).out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix a(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      a(r, j) = std::exp(row[j] - peak);
      total += a(r, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) a(r, j) /= total;
  }
  return a;
}

Matrix softmax_rows_backward(const Matrix& a, const Matrix& d_a) {
  Matrix d(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) dot += a(r, j) * d_a(r, j);
    for (std::size_t j = 0; j < a.cols(); ++j) d(r, j) = a(r, j) * (d_a(r, j) - dot);
  }
  return d;
}

Matrix cmfa_weights(const Embeddings& emb, const AttentionParams& params, std::size_t head) {
  params.validate();
  validate_embeddings(emb, params, true);
  if (head >= params.head_count()) throw ShapeError("head index out of range");
  const std::size_t ch = params.cmfa.head_dim();
  const auto& hp = params.cmfa.heads[head];
  const Matrix q = matmul((emb.tokens + emb.query).col_block(head * ch, ch), hp.w_q);
  const Matrix k = matmul((emb.rgb_features + emb.rgb_structure).col_block(head * ch, ch), hp.w_k);
  return softmax_rows(matmul_nt(q, k) * (1.0 / std::sqrt(static_cast<double>(ch))));
}

Matrix cmfa_forward(const Embeddings& emb, const AttentionParams& params) {
  params.validate();
  validate_embeddings(emb, params, true);
  return cmfa_attend(emb.tokens, emb, params).out;
}

Matrix cmfa_block(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& params) {
  check_layer_inputs(t_prev, emb, params, false);
  const Matrix x = layer_norm(t_prev, params.cmfa.ln_gamma, params.cmfa.ln_beta);
  return t_prev + cmfa_attend(x, emb, params).out;
}

LayerOutput layer_forward(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& params) {
  check_layer_inputs(t_prev, emb, params, true);
  LayerCache k = layer_cached(t_prev, emb, params);
  return {std::move(k.out), std::move(k.cmfa.weights), std::move(k.msa.weights), std::move(k.mca.weights)};
}

AttentionGradients cmfa_forward_backward(const Embeddings& emb, const AttentionParams& params,
                                         const Matrix& d_out) {
  params.validate();
  validate_embeddings(emb, params, true);
  const AttendCache k = cmfa_attend(emb.tokens, emb, params);
  check_input(d_out, k.out.rows(), k.out.cols(), "dL/dY");
  AttentionGradients g = zero_grads(emb, params, emb.tokens);
  g.inputs.tokens += cmfa_attend_backward(k, params, d_out, g);
  return g;
}

AttentionGradients cmfa_block_backward(const Matrix& t_prev, const Embeddings& emb,
                                       const AttentionParams& params, const Matrix& d_out) {
  check_layer_inputs(t_prev, emb, params, false);
  check_input(d_out, t_prev.rows(), t_prev.cols(), "dL/dY");
  const NormCache norm = norm_forward(t_prev, params.cmfa.ln_gamma, params.cmfa.ln_beta);
  const AttendCache k = cmfa_attend(norm.out, emb, params);
  AttentionGradients g = zero_grads(emb, params, t_prev);
  const Matrix d_x = cmfa_attend_backward(k, params, d_out, g);
  g.inputs.tokens = d_out + norm_backward(norm, params.cmfa.ln_gamma, d_x, g.params.cmfa.ln_gamma,
                                          g.params.cmfa.ln_beta);
  return g;
}

AttentionGradients layer_backward(const Matrix& t_prev, const Embeddings& emb, const AttentionParams& params,
                                  const Matrix& d_out) {
  check_layer_inputs(t_prev, emb, params, true);
  check_input(d_out, t_prev.rows(), t_prev.cols(), "dL/dY");
  const LayerCache k = layer_cached(t_prev, emb, params);
  AttentionGradients g = zero_grads(emb, params, t_prev);

  // T' = S + MCA(LN_m(S))
  Matrix d_s = d_out;
  d_s += norm_backward(k.norm_m, params.mca.ln_gamma, mca_attend_backward(k.mca, params, d_out, g),
                       g.params.mca.ln_gamma, g.params.mca.ln_beta);
  // S = T1 + MSA(LN_s(T1))
  Matrix d_t1 = d_s;
  d_t1 += norm_backward(k.norm_s, params.msa.ln_gamma, msa_attend_backward(k.msa, params, d_s, g),
                        g.params.msa.ln_gamma, g.params.msa.ln_beta);
  // T1 = T_prev + CMFA(LN_c(T_prev))
  Matrix d_t = d_t1;
  d_t += norm_backward(k.norm_c, params.cmfa.ln_gamma, cmfa_attend_backward(k.cmfa, params, d_t1, g),
                       g.params.cmfa.ln_gamma, g.params.cmfa.ln_beta);
  g.inputs.tokens = std::move(d_t);
  return g;
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

struct Slot {
  std::string name;
  double* value;
  const double* grad;
};

void add_matrix_slots(std::vector<Slot>& out, const std::string& name, Matrix& v, const Matrix& g) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back({name + "[" + std::to_string(i) + "]", &v.data()[i], &g.data()[i]});
  }
}

void add_block_slots(std::vector<Slot>& out, const std::string& name, BlockParams& v, const BlockParams& g,
                     bool projection_only) {
  add_matrix_slots(out, name + ".W_P", v.w_p, g.w_p);
  if (projection_only) return;
  for (std::size_t h = 0; h < v.heads.size(); ++h) {
    const std::string hn = name + ".head" + std::to_string(h);
    add_matrix_slots(out, hn + ".W_q", v.heads[h].w_q, g.heads[h].w_q);
    add_matrix_slots(out, hn + ".W_k", v.heads[h].w_k, g.heads[h].w_k);
    add_matrix_slots(out, hn + ".W_v", v.heads[h].w_v, g.heads[h].w_v);
  }
}

void add_norm_slots(std::vector<Slot>& out, const std::string& name, BlockParams& v, const BlockParams& g) {
  for (std::size_t i = 0; i < v.ln_gamma.size(); ++i) {
    out.push_back({name + ".ln_gamma[" + std::to_string(i) + "]", &v.ln_gamma[i], &g.ln_gamma[i]});
    out.push_back({name + ".ln_beta[" + std::to_string(i) + "]", &v.ln_beta[i], &g.ln_beta[i]});
  }
}

double weighted_sum(const Matrix& y, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(GradCheckTarget target, const GradCheckConfig& cfg) {
  if (!(cfg.step > 0.0)) throw ParameterError("grad_check: step must be positive");
  check_heads(cfg.channels, cfg.heads);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AttentionParams params = AttentionParams::random(cfg.channels, cfg.heads, rng.next());
  params.value_source = cfg.value_source;
  Embeddings emb = Embeddings::random(cfg.tokens, cfg.patches, cfg.channels, rng.next());
  const Matrix weights = random_matrix(rng, cfg.tokens, cfg.channels, 1.0);

  // emb.tokens doubles as T_prev for the block and the layer.
  std::function<Matrix()> forward;
  std::function<AttentionGradients()> backward;
  switch (target) {
    case GradCheckTarget::output_projection:
    case GradCheckTarget::cmfa_forward:
      forward = [&] { return cmfa_forward(emb, params); };
      backward = [&] { return cmfa_forward_backward(emb, params, weights); };
      break;
    case GradCheckTarget::cmfa_block:
      forward = [&] { return cmfa_block(emb.tokens, emb, params); };
      backward = [&] { return cmfa_block_backward(emb.tokens, emb, params, weights); };
      break;
    case GradCheckTarget::layer_forward:
      forward = [&] { return layer_forward(emb.tokens, emb, params).output; };
      backward = [&] { return layer_backward(emb.tokens, emb, params, weights); };
      break;
  }

  const AttentionGradients grads = backward();
  std::vector<Slot> slots;
  const bool projection_only = target == GradCheckTarget::output_projection;
  add_block_slots(slots, "cmfa", params.cmfa, grads.params.cmfa, projection_only);
  if (!projection_only) {
    add_matrix_slots(slots, "T", emb.tokens, grads.inputs.tokens);
    add_matrix_slots(slots, "Q", emb.query, grads.inputs.query);
    add_matrix_slots(slots, "F_rgb", emb.rgb_features, grads.inputs.rgb_features);
    add_matrix_slots(slots, "P_rgb", emb.rgb_structure, grads.inputs.rgb_structure);
  }
  if (target == GradCheckTarget::cmfa_block || target == GradCheckTarget::layer_forward) {
    add_norm_slots(slots, "cmfa", params.cmfa, grads.params.cmfa);
  }
  if (target == GradCheckTarget::layer_forward) {
    add_block_slots(slots, "msa", params.msa, grads.params.msa, false);
    add_norm_slots(slots, "msa", params.msa, grads.params.msa);
    add_block_slots(slots, "mca", params.mca, grads.params.mca, false);
    add_norm_slots(slots, "mca", params.mca, grads.params.mca);
    add_matrix_slots(slots, "F_evt", emb.event_features, grads.inputs.event_features);
    add_matrix_slots(slots, "P_evt", emb.event_structure, grads.inputs.event_structure);
  }

  GradCheckReport report;
  for (const Slot& s : slots) {
    const double analytic = *s.grad;
    if (!std::isfinite(analytic)) throw NumericError("grad_check: non-finite gradient at " + s.name);
    const double saved = *s.value;
    *s.value = saved + cfg.step;
    const double up = weighted_sum(forward(), weights);
    *s.value = saved - cfg.step;
    const double down = weighted_sum(forward(), weights);
    *s.value = saved;
    const double numeric = (up - down) / (2.0 * cfg.step);
    if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite difference at " + s.name);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (report.worst.empty() || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst = s.name;
    }
    ++report.checked;
  }
  return report;
}

double softmax_jacobian_check(std::size_t width, std::uint64_t seed) {
  if (width == 0) throw ParameterError("softmax_jacobian_check: width must be positive");
  Rng rng(seed);
  const Matrix logits = random_matrix(rng, 1, width, 2.0);
  const Matrix a = softmax_rows(logits);
  double worst = 0.0;
  for (std::size_t j = 0; j < width; ++j) {
    Matrix unit(1, width);
    unit(0, j) = 1.0;
    // Row j of the Jacobian, J[j][i] = d a_j / d z_i.
    const Matrix row = softmax_rows_backward(a, unit);
    for (std::size_t i = 0; i < width; ++i) {
      const double closed = (i == j ? a(0, j) : 0.0) - a(0, j) * a(0, i);
      worst = std::max(worst, std::abs(row(0, i) - closed));
    }
  }
  return worst;
}

std::string to_string(ValueSource v) {
  return v == ValueSource::input_embedding ? "input_embedding" : "rgb_features";
}

ValueSource value_source_from_string(const std::string& s) {
  if (s == "input_embedding") return ValueSource::input_embedding;
  if (s == "rgb_features") return ValueSource::rgb_features;
  throw ParameterError("unknown value_source '" + s + "'");
}

std::string to_string(GradCheckTarget t) {
  switch (t) {
    case GradCheckTarget::output_projection: return "output_projection";
    case GradCheckTarget::cmfa_forward: return "cmfa_forward";
    case GradCheckTarget::cmfa_block: return "cmfa_block";
    case GradCheckTarget::layer_forward: return "layer_forward";
  }
  return "?";
}

GradCheckTarget grad_check_target_from_string(const std::string& s) {
  for (auto t : {GradCheckTarget::output_projection, GradCheckTarget::cmfa_forward, GradCheckTarget::cmfa_block,
                 GradCheckTarget::layer_forward}) {
    if (to_string(t) == s) return t;
  }
  throw ParameterError("unknown grad-check target '" + s + "'");
}

}  // namespace evlign
