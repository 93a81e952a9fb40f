// Copyright 2026 The sparsemarg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <locale>
#include <numbers>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparsemarg/bitvec.hpp"
#include "sparsemarg/error.hpp"
#include "sparsemarg/estimators.hpp"
#include "sparsemarg/marginal.hpp"
#include "sparsemarg/numeric.hpp"
#include "sparsemarg/rng.hpp"
#include "sparsemarg/simplex.hpp"
#include "sparsemarg/sparsemap.hpp"
#include "sparsemarg/structured_topk.hpp"

namespace sparsemarg::toy {

enum class Method { dense, sparse, topk, sparsemap, sparsemap_budget, sfe, sum_and_sample };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::dense: return "dense";
    case Method::sparse: return "sparse";
    case Method::topk: return "topk";
    case Method::sparsemap: return "sparsemap";
    case Method::sparsemap_budget: return "sparsemap_budget";
    case Method::sfe: return "sfe";
    case Method::sum_and_sample: return "sum_and_sample";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::dense, Method::sparse, Method::topk, Method::sparsemap,
                   Method::sparsemap_budget, Method::sfe, Method::sum_and_sample})
    if (to_string(m) == name) return m;
  throw InvalidInput("unknown method: " + name);
}

/// Deterministic mappings, whose gradients can be checked by finite
/// differences.
inline bool is_deterministic(Method m) noexcept {
  return m != Method::sfe && m != Method::sum_and_sample;
}

struct TrainConfig {
  Method method = Method::sparse;
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t k = 1;            // topk, sum_and_sample
  std::size_t budget = 0;       // sparsemap_budget; 0 selects D / 2
  double entropy_coef = 0.05;   // categorical task only
  double baseline_decay = 0.9;  // sfe
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;    // mean expected downstream loss
  double metric = 0.0;  // categorical: accuracy; bit-vector: negative ELBO
  CallStats calls;
  double support_mean = 0.0;
  std::size_t support_max = 0;
  double certificate_rate = 0.0;  // topk only
};

struct TrainingLog {
  std::string task;
  TrainConfig config;
  std::size_t latent_dim = 0;  // K or D
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
};

/// Raised when the loss becomes non-finite; carries the epochs completed.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainingLog log) : Error(what), log_(std::move(log)) {}
  const TrainingLog& log() const noexcept { return log_; }

 private:
  TrainingLog log_;
};

// ---------------------------------------------------------------------------
// Data

/// Gaussian clusters in unit-scale features (divided by sqrt(F)). The label
/// is the cluster id, replaced by a uniformly random class with probability
/// `label_noise`, which puts a floor under the achievable loss.
struct CategoricalData {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
};

inline CategoricalData make_categorical_data(std::size_t n, std::uint64_t seed,
                                             std::size_t num_classes = 16,
                                             std::size_t feature_dim = 64,
                                             double noise = 1.0, double label_noise = 0.2) {
  CounterRng rng(seed, /*stream=*/101);
  const double unit = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(feature_dim));
  for (auto& c : centers)
    for (double& v : c) v = rng.normal();
  CategoricalData d;
  d.feature_dim = feature_dim;
  d.num_classes = num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cluster = i % num_classes;
    std::vector<double> x(feature_dim);
    for (std::size_t j = 0; j < feature_dim; ++j) x[j] = unit * (centers[cluster][j] + noise * rng.normal());
    d.x.push_back(std::move(x));
    d.y.push_back(rng.uniform() < label_noise ? rng.below(num_classes) : cluster);
  }
  return d;
}

/// Binary images of P pixels. Each pixel belongs to one of D templates and is
/// on when that template's ground-truth bit is on, flipped with prob `noise`.
struct BitVecData {
  std::size_t latent_dim = 0;
  std::size_t pixels = 0;
  std::vector<std::vector<double>> x;
  std::vector<Bits> codes;
};

inline BitVecData make_bitvec_data(std::size_t n, std::size_t D, std::uint64_t seed,
                                   std::size_t pixels = 36, double noise = 0.05) {
  sparsemarg::detail::require(D >= 1 && pixels >= D, "make_bitvec_data: need at least one pixel per bit");
  CounterRng rng(seed, /*stream=*/202);
  std::vector<std::size_t> owner(pixels);
  for (std::size_t j = 0; j < pixels; ++j) owner[j] = j % D;
  for (std::size_t j = pixels; j > 1; --j) std::swap(owner[j - 1], owner[rng.below(j)]);
  BitVecData d;
  d.latent_dim = D;
  d.pixels = pixels;
  for (std::size_t i = 0; i < n; ++i) {
    Bits code(D);
    for (auto& b : code) b = static_cast<std::uint8_t>(rng.uniform() < 0.5);
    std::vector<double> x(pixels);
    for (std::size_t j = 0; j < pixels; ++j) {
      bool on = code[owner[j]] != 0;
      if (rng.uniform() < noise) on = !on;
      x[j] = on ? 1.0 : 0.0;
    }
    d.x.push_back(std::move(x));
    d.codes.push_back(std::move(code));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Models. Parameters are flat vectors so they can be perturbed uniformly.

/// Linear encoder x -> K scores; the decoder is a per-symbol table of class
/// logits, l(x, z) = -log softmax(dec[z])_y.
///
/// The encoder has no bias: a shared bias lets one symbol win many clusters
/// early, and under a sparse mapping symbols outside the support never
/// recover.
struct ToyCategoricalModel {
  std::size_t K = 0, F = 0, C = 0;
  std::vector<double> params;  // [w_enc (K x F) | dec (K x C)]

  /// Small random encoder. The decoder starts from a random one-to-one
  /// symbol-to-class code of strength `code` (when K >= C) plus noise, so that
  /// symbols are distinguishable before the encoder has learned anything.
  static ToyCategoricalModel init(std::size_t K, std::size_t F, std::size_t C, std::uint64_t seed,
                                  double code = 2.0, double enc_scale = 0.01, double dec_scale = 0.1) {
    ToyCategoricalModel m;
    m.K = K;
    m.F = F;
    m.C = C;
    m.params.assign(K * F + K * C, 0.0);
    CounterRng rng(seed, /*stream=*/303);
    for (std::size_t i = 0; i < m.params.size(); ++i)
      m.params[i] = (i < m.dec_offset() ? enc_scale : dec_scale) * rng.normal();
    std::vector<std::size_t> perm(K);
    for (std::size_t z = 0; z < K; ++z) perm[z] = z;
    for (std::size_t z = K; z > 1; --z) std::swap(perm[z - 1], perm[rng.below(z)]);
    for (std::size_t z = 0; z < K; ++z)
      if (perm[z] < C) m.params[m.dec_offset() + z * C + perm[z]] += code;
    return m;
  }

  std::size_t dec_offset() const noexcept { return K * F; }

  std::vector<double> scores(std::span<const double> x) const {
    std::vector<double> s(K);
    for (std::size_t z = 0; z < K; ++z) {
      double v = 0.0;
      for (std::size_t j = 0; j < F; ++j) v += params[z * F + j] * x[j];
      s[z] = v;
    }
    return s;
  }

  /// Loss of symbol z for label y; param_grad covers the decoder table.
  LossEval downstream(std::size_t z, std::size_t y) const {
    const double* row = params.data() + dec_offset() + z * C;
    const double lse = log_sum_exp(std::span<const double>(row, C));
    LossEval e;
    e.value = lse - row[y];
    e.param_grad.assign(K * C, 0.0);
    for (std::size_t c = 0; c < C; ++c) e.param_grad[z * C + c] = std::exp(row[c] - lse);
    e.param_grad[z * C + y] -= 1.0;
    return e;
  }

  std::size_t predict(std::span<const double> x) const {
    const auto s = scores(x);
    const auto z = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    const double* row = params.data() + dec_offset() + z * C;
    return static_cast<std::size_t>(std::max_element(row, row + C) - row);
  }
};

/// Linear encoder x -> D variable scores t; linear Bernoulli decoder
/// a_z -> P pixel logits.
struct ToyBitVectorVAE {
  std::size_t D = 0, P = 0;
  std::vector<double> params;  // [w_enc (D x P) | b_enc (D) | w_dec (P x D) | b_dec (P)]

  static ToyBitVectorVAE init(std::size_t D, std::size_t P, std::uint64_t seed,
                              double init_scale = 0.1) {
    ToyBitVectorVAE m;
    m.D = D;
    m.P = P;
    m.params.assign(D * P + D + P * D + P, 0.0);
    CounterRng rng(seed, /*stream=*/404);
    for (double& v : m.params) v = init_scale * rng.normal();
    return m;
  }

  std::size_t dec_offset() const noexcept { return D * P + D; }

  std::vector<double> scores(std::span<const double> x) const {
    std::vector<double> t(D);
    for (std::size_t i = 0; i < D; ++i) {
      double v = params[D * P + i];
      for (std::size_t j = 0; j < P; ++j) v += params[i * P + j] * x[j];
      t[i] = v;
    }
    return t;
  }

  /// -log p(x | z) under independent Bernoulli pixels; param_grad covers the
  /// decoder block.
  LossEval recon(const Bits& bits, std::span<const double> x) const {
    const double* w = params.data() + dec_offset();
    const double* b = w + P * D;
    LossEval e;
    e.param_grad.assign(P * D + P, 0.0);
    for (std::size_t j = 0; j < P; ++j) {
      double logit = b[j];
      for (std::size_t i = 0; i < D; ++i)
        if (bits[i]) logit += w[j * D + i];
      // softplus(l) - x l
      const double sp = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
      e.value += sp - x[j] * logit;
      const double dl = 1.0 / (1.0 + std::exp(-logit)) - x[j];
      for (std::size_t i = 0; i < D; ++i)
        if (bits[i]) e.param_grad[j * D + i] = dl;
      e.param_grad[P * D + j] = dl;
    }
    return e;
  }
};

// ---------------------------------------------------------------------------
// Per-example objective: E_p[l] - entropy_coef * H(p), and its gradient.

struct ExampleOutcome {
  double expected_loss = 0.0;
  double objective = 0.0;
  std::vector<double> grad;  // w.r.t. the model's flat parameters
  std::uint64_t calls = 0;
  std::size_t support = 0;
  bool certificate = false;
  std::vector<OutcomeId> support_ids;
  MovingAverageBaseline baseline;
};

namespace detail {

struct ScoreSpaceResult {
  double expected_loss = 0.0;
  double objective = 0.0;
  std::vector<double> grad_scores;
  std::vector<double> loss_param_grad;
  std::uint64_t calls = 0;
  std::size_t support = 0;
  bool certificate = false;
  std::vector<OutcomeId> support_ids;
  MovingAverageBaseline baseline;
};

/// Upstream of E_p[l] - c H(p) w.r.t. p on the support: l_z + c (log p_z + 1).
inline std::vector<double> entropy_regularized_upstream(std::span<const double> losses,
                                                        std::span<const double> probs, double c) {
  std::vector<double> u(losses.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = losses[i] + c * (std::log(probs[i]) + 1.0);
  return u;
}

/// Gradient of -c H(softmax(s)) w.r.t. s, without touching the loss.
inline std::vector<double> softmax_entropy_grad(std::span<const double> s, std::span<const double> p,
                                                double c) {
  const double lse = log_sum_exp(s);
  std::vector<double> u(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) u[i] = c * (s[i] - lse + 1.0);
  return softmax_vjp(p, u);
}

/// Objective and gradient over an explicit score vector (categorical, or an
/// enumerated bit-vector space).
inline ScoreSpaceResult objective_over_scores(std::span<const double> s, const LossOracle<OutcomeId>& loss,
                                              const TrainConfig& cfg, double entropy_coef,
                                              MovingAverageBaseline baseline, std::uint64_t sample_seed) {
  ScoreSpaceResult r;
  r.baseline = baseline;
  switch (cfg.method) {
    case Method::dense: {
      const auto p = softmax_ref(s);
      std::vector<double> losses(s.size());
      for (std::size_t z = 0; z < s.size(); ++z) {
        LossEval e = loss.eval(z);
        losses[z] = e.value;
        r.expected_loss += p[z] * e.value;
        sparsemarg::detail::axpy(r.loss_param_grad, p[z], e.param_grad);
      }
      const double lse = log_sum_exp(s);
      std::vector<double> logp(s.size());
      for (std::size_t z = 0; z < s.size(); ++z) logp[z] = s[z] - lse;
      double h = 0.0;
      std::vector<double> u(s.size());
      for (std::size_t z = 0; z < s.size(); ++z) {
        h -= p[z] * logp[z];
        u[z] = losses[z] + entropy_coef * (logp[z] + 1.0);
      }
      r.objective = r.expected_loss - entropy_coef * h;
      r.grad_scores = softmax_vjp(p, u);
      r.calls = s.size();
      r.support = s.size();
      for (std::size_t z = 0; z < s.size(); ++z) r.support_ids.push_back(z);
      break;
    }
    case Method::sparse:
    case Method::topk: {
      SparseDistribution p;
      if (cfg.method == Method::sparse) {
        p = sparsemax(s);
      } else {
        const auto res = topk_sparsemax(s, cfg.k);
        p = res.distribution;
        r.certificate = res.certificate;
      }
      const MarginalReport rep = sparse_expectation(p, loss);
      const auto probs = p.probs();
      const auto u = entropy_regularized_upstream(rep.losses, probs, entropy_coef);
      r.expected_loss = rep.expected_loss;
      r.objective = rep.expected_loss - entropy_coef * entropy(p);
      r.grad_scores = grad_scores_through_mapping(s, p, u);
      r.loss_param_grad = rep.expected_param_grad;
      r.calls = rep.calls_used;
      r.support = p.size();
      r.support_ids = p.indices();
      break;
    }
    case Method::sfe: {
      const auto p = softmax_ref(s);
      auto res = sfe_grad(s, loss, baseline, sample_seed);
      r.grad_scores = std::move(res.estimate.grad_scores);
      const auto hg = softmax_entropy_grad(s, p, entropy_coef);
      for (std::size_t i = 0; i < s.size(); ++i) r.grad_scores[i] += hg[i];
      r.expected_loss = res.estimate.loss_estimate;
      r.objective = r.expected_loss - entropy_coef * entropy(std::span<const double>(p));
      r.loss_param_grad = std::move(res.estimate.param_grad);
      r.calls = res.estimate.calls;
      r.support = 1;
      r.support_ids = {res.sample};
      r.baseline = res.baseline;
      break;
    }
    case Method::sum_and_sample: {
      const auto p = softmax_ref(s);
      auto est = sum_and_sample_grad(s, loss, cfg.k, sample_seed);
      r.grad_scores = std::move(est.grad_scores);
      const auto hg = softmax_entropy_grad(s, p, entropy_coef);
      for (std::size_t i = 0; i < s.size(); ++i) r.grad_scores[i] += hg[i];
      r.expected_loss = est.loss_estimate;
      r.objective = r.expected_loss - entropy_coef * entropy(std::span<const double>(p));
      r.loss_param_grad = std::move(est.param_grad);
      r.calls = est.calls;
      r.support = est.calls;
      break;
    }
    default:
      throw InvalidInput("method " + to_string(cfg.method) + " needs a structured latent space");
  }
  return r;
}

inline void add_encoder_grad(std::vector<double>& grad, std::span<const double> g_scores,
                             std::span<const double> x, std::size_t rows, std::size_t cols, bool bias) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) grad[r * cols + j] += g_scores[r] * x[j];
    if (bias) grad[rows * cols + r] += g_scores[r];
  }
}

}  // namespace detail

inline void validate_config(const std::string& task, const TrainConfig& cfg, std::size_t latent_dim) {
  using M = Method;
  const M m = cfg.method;
  if (task == "categorical") {
    if (m == M::topk || m == M::sparsemap || m == M::sparsemap_budget)
      throw InvalidInput("method " + to_string(m) + " applies to the bitvec task only");
    if (m == M::dense && latent_dim > 512) throw InvalidInput("dense marginalization needs K <= 512");
  } else if (task == "bitvec") {
    const bool enumerated = m == M::dense || m == M::sparse || m == M::sfe || m == M::sum_and_sample;
    if (enumerated && latent_dim > 16)
      throw InvalidInput("method " + to_string(m) + " enumerates 2^D structures; needs D <= 16");
    if (m == M::sparsemap_budget && cfg.budget > latent_dim)
      throw InvalidInput("budget must not exceed D");
  } else {
    throw InvalidInput("unknown task: " + task);
  }
  if ((m == M::topk || m == M::sum_and_sample) && cfg.k < 1) throw InvalidInput("k must be at least 1");
  if (cfg.batch_size < 1) throw InvalidInput("batch size must be at least 1");
}

inline ExampleOutcome categorical_example(const ToyCategoricalModel& model, std::span<const double> x,
                                          std::size_t y, const TrainConfig& cfg,
                                          MovingAverageBaseline baseline = {}, std::uint64_t sample_seed = 0) {
  const auto s = model.scores(x);
  LossOracle<OutcomeId> loss([&](const OutcomeId& z) { return model.downstream(static_cast<std::size_t>(z), y); });
  auto r = detail::objective_over_scores(s, loss, cfg, cfg.entropy_coef, baseline, sample_seed);

  ExampleOutcome out;
  out.grad.assign(model.params.size(), 0.0);
  detail::add_encoder_grad(out.grad, r.grad_scores, x, model.K, model.F, /*bias=*/false);
  for (std::size_t i = 0; i < r.loss_param_grad.size(); ++i) out.grad[model.dec_offset() + i] += r.loss_param_grad[i];
  out.expected_loss = r.expected_loss;
  out.objective = r.objective;
  out.calls = r.calls;
  out.support = r.support;
  out.certificate = r.certificate;
  out.support_ids = std::move(r.support_ids);
  out.baseline = r.baseline;
  return out;
}

/// Negative ELBO of one image under the configured posterior mapping:
/// E_q[-log p(x|z)] + KL[q || uniform over 2^D], evaluated on q's support.
inline ExampleOutcome bitvec_example(const ToyBitVectorVAE& model, std::span<const double> x,
                                     const TrainConfig& cfg, MovingAverageBaseline baseline = {},
                                     std::uint64_t sample_seed = 0) {
  const std::size_t D = model.D;
  const double log_dim = static_cast<double>(D) * std::numbers::ln2;
  const auto t = model.scores(x);
  ExampleOutcome out;
  out.grad.assign(model.params.size(), 0.0);
  std::vector<double> g_t;
  std::vector<double> dec_grad;

  const Method m = cfg.method;
  if (m == Method::topk || m == Method::sparsemap || m == Method::sparsemap_budget) {
    LossOracle<Structure> recon([&](const Structure& z) { return model.recon(z.bits, x); });
    std::vector<Structure> structures;
    std::vector<double> probs;
    StructuredTopK topk_result;
    SparseMapResult smap_result;
    if (m == Method::topk) {
      topk_result = structured_topk_sparsemax(t, cfg.k);
      structures = topk_result.structures;
      probs = topk_result.probs;
      out.certificate = topk_result.certificate;
    } else {
      if (m == Method::sparsemap) {
        smap_result = sparsemap(BitVectorPolytope(D), t);
      } else {
        const std::size_t budget = cfg.budget ? cfg.budget : std::max<std::size_t>(1, D / 2);
        smap_result = sparsemap(BudgetPolytope(D, budget), t);
      }
      structures = smap_result.structures;
      probs = smap_result.probs;
    }
    const MarginalReport rep = sparse_expectation(structures, probs, recon);
    const auto u = detail::entropy_regularized_upstream(rep.losses, probs, 1.0);
    g_t = m == Method::topk ? grad_scores_through_mapping(topk_result, u)
                            : grad_scores_through_mapping(smap_result, u);
    double h = 0.0;
    for (double p : probs) h -= p * std::log(p);
    out.expected_loss = rep.expected_loss;
    out.objective = rep.expected_loss + log_dim - h;
    dec_grad = rep.expected_param_grad;
    out.calls = rep.calls_used;
    out.support = structures.size();
    for (const auto& z : structures) out.support_ids.push_back(pack_bits(z.bits));
    std::sort(out.support_ids.begin(), out.support_ids.end());
    out.baseline = baseline;
  } else {
    // Enumerated space: s_z = <a_z, t> for every z, ids in packed order.
    const OutcomeId n = OutcomeId{1} << D;
    std::vector<Bits> all(static_cast<std::size_t>(n));
    std::vector<double> s(static_cast<std::size_t>(n));
    for (OutcomeId id = 0; id < n; ++id) {
      all[id] = unpack_bits(id, D);
      s[id] = structure_score(all[id], t);
    }
    LossOracle<OutcomeId> recon([&](const OutcomeId& id) { return model.recon(all[id], x); });
    auto r = detail::objective_over_scores(s, recon, cfg, 1.0, baseline, sample_seed);
    g_t.assign(D, 0.0);
    for (OutcomeId id = 0; id < n; ++id)
      for (std::size_t i = 0; i < D; ++i)
        if (all[id][i]) g_t[i] += r.grad_scores[id];
    out.expected_loss = r.expected_loss;
    out.objective = r.objective + log_dim;
    dec_grad = std::move(r.loss_param_grad);
    out.calls = r.calls;
    out.support = r.support;
    out.support_ids = std::move(r.support_ids);
    out.baseline = r.baseline;
  }
  detail::add_encoder_grad(out.grad, g_t, x, D, model.P, /*bias=*/true);
  for (std::size_t i = 0; i < dec_grad.size(); ++i) out.grad[model.dec_offset() + i] += dec_grad[i];
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

struct EpochAccumulator {
  double loss = 0.0, metric = 0.0;
  std::vector<double> calls;
  double support_sum = 0.0;
  std::size_t support_max = 0, certificates = 0, n = 0;

  void add(const ExampleOutcome& o, double metric_value) {
    loss += o.expected_loss;
    metric += metric_value;
    calls.push_back(static_cast<double>(o.calls));
    support_sum += static_cast<double>(o.support);
    support_max = std::max(support_max, o.support);
    certificates += o.certificate ? 1 : 0;
    ++n;
  }

  EpochRecord finish(std::size_t epoch) const {
    EpochRecord r;
    r.epoch = epoch;
    const double dn = static_cast<double>(n);
    r.loss = loss / dn;
    r.metric = metric / dn;
    r.calls = call_stats(calls);
    r.support_mean = support_sum / dn;
    r.support_max = support_max;
    r.certificate_rate = static_cast<double>(certificates) / dn;
    return r;
  }
};

/// Shared SGD loop. `step(example, baseline, seed)` returns the outcome and
/// the metric contribution for that example.
template <class Model, class Step>
TrainingLog run_sgd(Model& model, std::size_t n, const TrainConfig& cfg, TrainingLog log, Step step) {
  sparsemarg::detail::require(n > 0, "training set is empty");
  const CounterRng root(cfg.seed, /*stream=*/505);
  MovingAverageBaseline baseline{0.0, cfg.baseline_decay};

  {
    // Evaluation pass before any update.
    const CounterRng eval_rng = root.split(0);
    double total = 0.0;
    MovingAverageBaseline b = baseline;
    for (std::size_t i = 0; i < n; ++i) {
      auto [o, metric] = step(i, b, eval_rng.split(i)());
      (void)metric;
      total += o.expected_loss;
    }
    log.initial_loss = total / static_cast<double>(n);
  }

  std::vector<std::size_t> order(n);
  std::vector<double> grad(model.params.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    CounterRng epoch_rng = root.split(epoch);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[epoch_rng.below(i)]);

    EpochAccumulator acc;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        auto [o, metric] = step(i, baseline, epoch_rng.split(1000003 + i)());
        if (!std::isfinite(o.objective))
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch), log);
        baseline = o.baseline;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += o.grad[p];
        acc.add(o, metric);
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t p = 0; p < grad.size(); ++p) model.params[p] -= scale * grad[p];
      for (double v : model.params)
        if (!std::isfinite(v)) throw TrainingDiverged("non-finite parameter at epoch " + std::to_string(epoch), log);
    }
    log.epochs.push_back(acc.finish(epoch));
  }
  return log;
}

}  // namespace detail

inline TrainingLog train_categorical(ToyCategoricalModel& model, const CategoricalData& data,
                                     const TrainConfig& cfg) {
  validate_config("categorical", cfg, model.K);
  TrainingLog log;
  log.task = "categorical";
  log.config = cfg;
  log.latent_dim = model.K;
  return detail::run_sgd(model, data.x.size(), cfg, std::move(log),
                         [&](std::size_t i, MovingAverageBaseline b, std::uint64_t seed) {
                           const double correct = model.predict(data.x[i]) == data.y[i] ? 1.0 : 0.0;
                           return std::pair{categorical_example(model, data.x[i], data.y[i], cfg, b, seed), correct};
                         });
}

inline TrainingLog train_bitvec_vae(ToyBitVectorVAE& model, const BitVecData& data, const TrainConfig& cfg) {
  validate_config("bitvec", cfg, model.D);
  TrainingLog log;
  log.task = "bitvec";
  log.config = cfg;
  log.latent_dim = model.D;
  return detail::run_sgd(model, data.x.size(), cfg, std::move(log),
                         [&](std::size_t i, MovingAverageBaseline b, std::uint64_t seed) {
                           auto o = bitvec_example(model, data.x[i], cfg, b, seed);
                           const double neg_elbo = o.objective;
                           return std::pair{std::move(o), neg_elbo};
                         });
}

// ---------------------------------------------------------------------------
// Finite-difference check of the assembled gradient

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool stable = true;  // support unchanged under every +-h perturbation
  std::size_t params_checked = 0;
};

/// Central differences over every parameter of the per-example objective.
/// `objective(params)` must return the ExampleOutcome at those parameters.
template <class Eval>
GradCheckReport finite_difference_check(std::vector<double> params, Eval objective, double h) {
  const ExampleOutcome base = objective(params);
  std::vector<double> fd(params.size());
  GradCheckReport rep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double keep = params[p];
    params[p] = keep + h;
    const ExampleOutcome up = objective(params);
    params[p] = keep - h;
    const ExampleOutcome down = objective(params);
    params[p] = keep;
    if (up.support_ids != base.support_ids || down.support_ids != base.support_ids) rep.stable = false;
    fd[p] = (up.objective - down.objective) / (2.0 * h);
  }
  rep.params_checked = params.size();
  rep.max_rel_error = relative_error(base.grad, fd);
  return rep;
}

inline GradCheckReport model_grad_check(const ToyCategoricalModel& model, Method method,
                                        std::span<const double> x, std::size_t y, double h = 1e-5,
                                        double entropy_coef = 0.05) {
  if (!is_deterministic(method)) throw InvalidInput("gradient check needs a deterministic mapping");
  TrainConfig cfg;
  cfg.method = method;
  cfg.entropy_coef = entropy_coef;
  validate_config("categorical", cfg, model.K);
  ToyCategoricalModel work = model;
  return finite_difference_check(model.params, [&](const std::vector<double>& p) {
    work.params = p;
    return categorical_example(work, x, y, cfg);
  }, h);
}

inline GradCheckReport model_grad_check(const ToyBitVectorVAE& model, const TrainConfig& cfg,
                                        std::span<const double> x, double h = 1e-5) {
  if (!is_deterministic(cfg.method)) throw InvalidInput("gradient check needs a deterministic mapping");
  validate_config("bitvec", cfg, model.D);
  ToyBitVectorVAE work = model;
  return finite_difference_check(model.params, [&](const std::vector<double>& p) {
    work.params = p;
    return bitvec_example(work, x, cfg);
  }, h);
}

// ---------------------------------------------------------------------------
// CSV

/// Header row; the third column is `accuracy` (categorical) or `neg_elbo`.
inline std::string train_csv_header(const std::string& task) {
  return std::string("epoch,loss,") + (task == "bitvec" ? "neg_elbo" : "accuracy") +
         ",calls_mean,calls_p10,calls_median,calls_p90,support_mean";
}

inline void write_csv(const TrainingLog& log, std::ostream& os) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << train_csv_header(log.task) << '\n' << std::setprecision(10);
  for (const auto& e : log.epochs)
    out << e.epoch << ',' << e.loss << ',' << e.metric << ',' << e.calls.mean << ',' << e.calls.p10 << ','
        << e.calls.median << ',' << e.calls.p90 << ',' << e.support_mean << '\n';
  os << out.str();
}

}  // namespace sparsemarg::toy
