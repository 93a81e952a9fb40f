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

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <span>
#include <thread>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "sparsemarg/error.hpp"
#include "sparsemarg/numeric.hpp"
#include "sparsemarg/rng.hpp"
#include "sparsemarg/simplex.hpp"
#include "sparsemarg/sparsemap.hpp"
#include "sparsemarg/structured_topk.hpp"
#include "sparsemarg/topk.hpp"

namespace sparsemarg {

/// Result of one downstream-loss evaluation: the loss and its gradient
/// w.r.t. the loss's own parameters (empty when the caller does not need it).
struct LossEval {
  double value = 0.0;
  std::vector<double> param_grad;
};

/// A downstream loss l(x, z) over outcomes of type Outcome that counts its
/// own evaluations. When constructed as reentrant, expectations may evaluate
/// it from several threads at once.
template <class Outcome>
class LossOracle {
 public:
  using Fn = std::function<LossEval(const Outcome&)>;

  explicit LossOracle(Fn fn, bool reentrant = false)
      : fn_(std::move(fn)), reentrant_(reentrant) {}

  LossOracle(const LossOracle&) = delete;
  LossOracle& operator=(const LossOracle&) = delete;

  LossEval eval(const Outcome& z) const {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return fn_(z);
  }

  std::uint64_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }
  bool reentrant() const noexcept { return reentrant_; }

 private:
  Fn fn_;
  bool reentrant_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

/// Expected loss over a sparse support, the per-outcome losses that produced
/// it, and the number of decoder calls spent.
struct MarginalReport {
  double expected_loss = 0.0;
  std::vector<double> losses;            // aligned with the support
  std::vector<double> expected_param_grad;
  std::vector<double> grad_wrt_scores;   // filled by grad_scores_through_mapping
  std::uint64_t calls_used = 0;
  std::size_t support_size = 0;
};

namespace detail {

constexpr std::size_t kParallelMinSupport = 16;

template <class Outcome>
std::vector<LossEval> evaluate_all(const std::vector<Outcome>& outcomes,
                                   const LossOracle<Outcome>& loss) {
  std::vector<LossEval> evals(outcomes.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (!loss.reentrant() || outcomes.size() < kParallelMinSupport || hw == 1) {
    for (std::size_t i = 0; i < outcomes.size(); ++i) evals[i] = loss.eval(outcomes[i]);
    return evals;
  }
  const std::size_t chunks = std::min<std::size_t>(hw, outcomes.size());
  std::vector<std::future<void>> jobs;
  for (std::size_t c = 0; c < chunks; ++c)
    jobs.push_back(std::async(std::launch::async, [&, c] {
      for (std::size_t i = c; i < outcomes.size(); i += chunks) evals[i] = loss.eval(outcomes[i]);
    }));
  for (auto& j : jobs) j.get();
  return evals;
}

/// Reduction in support order, so the result does not depend on threading.
inline MarginalReport reduce(std::span<const double> probs, std::vector<LossEval> evals) {
  MarginalReport r;
  r.support_size = probs.size();
  r.calls_used = evals.size();
  r.losses.reserve(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    r.losses.push_back(evals[i].value);
    r.expected_loss += probs[i] * evals[i].value;
    const auto& g = evals[i].param_grad;
    if (g.empty()) continue;
    if (r.expected_param_grad.empty()) r.expected_param_grad.assign(g.size(), 0.0);
    require_same_size(g.size(), r.expected_param_grad.size(), "loss parameter gradient");
    for (std::size_t j = 0; j < g.size(); ++j) r.expected_param_grad[j] += probs[i] * g[j];
  }
  return r;
}

}  // namespace detail

/// sum_{z in support} p_z l(z), one loss call per support element.
inline MarginalReport sparse_expectation(const SparseDistribution& p,
                                         const LossOracle<OutcomeId>& loss) {
  validate(p);
  const std::vector<OutcomeId> outcomes = p.indices();
  const std::vector<double> probs = p.probs();
  return detail::reduce(probs, detail::evaluate_all(outcomes, loss));
}

/// The same over explicit structures (SparseMAP or structured top-k output).
inline MarginalReport sparse_expectation(const std::vector<Structure>& structures,
                                         std::span<const double> probs,
                                         const LossOracle<Structure>& loss) {
  detail::require_same_size(structures.size(), probs.size(), "sparse_expectation");
  detail::require(!structures.empty(), "sparse_expectation: empty support");
  return detail::reduce(probs, detail::evaluate_all(structures, loss));
}

// Gradient of sum_z p_z l_z w.r.t. the scores that produced p, for each of
// the sparse mappings. Losses are given on the mapping's support only.

inline std::vector<double> grad_scores_through_mapping(std::span<const double> s,
                                                       const SparseDistribution& p,
                                                       std::span<const double> losses_on_support) {
  if (losses_on_support.size() != p.size())
    throw SupportMismatch("losses do not match the sparsemax support");
  std::vector<double> upstream(s.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    upstream[static_cast<std::size_t>(p.support[i].index)] = losses_on_support[i];
  return sparsemax_vjp(s, p, upstream);
}

inline std::vector<double> grad_scores_through_mapping(std::span<const double> s, std::size_t k,
                                                       const TopKSparsemaxResult& result,
                                                       std::span<const double> losses_on_support) {
  if (losses_on_support.size() != result.distribution.size())
    throw SupportMismatch("losses do not match the top-k sparsemax support");
  std::vector<double> upstream(s.size(), 0.0);
  for (std::size_t i = 0; i < result.distribution.size(); ++i)
    upstream[static_cast<std::size_t>(result.distribution.support[i].index)] = losses_on_support[i];
  return topk_sparsemax_vjp(s, k, result, upstream);
}

inline std::vector<double> grad_scores_through_mapping(const StructuredTopK& result,
                                                       std::span<const double> losses_on_support) {
  if (losses_on_support.size() != result.structures.size())
    throw SupportMismatch("losses do not match the structured top-k support");
  return structured_topk_vjp(result, losses_on_support);
}

inline std::vector<double> grad_scores_through_mapping(const SparseMapResult& result,
                                                       std::span<const double> losses_on_support) {
  if (losses_on_support.size() != result.structures.size())
    throw SupportMismatch("losses do not match the SparseMAP support");
  return sparsemap_vjp_probs(result, losses_on_support);
}

struct UniformPrior {
  double log_dim = 0.0;
};

/// Arbitrary prior given by its log-probability.
struct ExplicitPrior {
  std::function<double(OutcomeId)> log_prob;
};

using Prior = std::variant<UniformPrior, ExplicitPrior>;

struct ElboTerms {
  double expected_recon = 0.0;
  double kl_to_prior = 0.0;
  std::uint64_t calls = 0;

  /// Negative ELBO.
  double loss() const noexcept { return expected_recon + kl_to_prior; }
};

/// Expected reconstruction loss over the support and KL[q || prior] in closed
/// form. Against a uniform prior the KL is log(dim) - H(q).
inline ElboTerms elbo_terms(const SparseDistribution& q, const LossOracle<OutcomeId>& recon,
                            const Prior& prior) {
  const MarginalReport r = sparse_expectation(q, recon);
  ElboTerms out;
  out.expected_recon = r.expected_loss;
  out.calls = r.calls_used;
  if (const auto* u = std::get_if<UniformPrior>(&prior)) {
    out.kl_to_prior = u->log_dim - entropy(q);
  } else {
    const auto& e = std::get<ExplicitPrior>(prior);
    for (const auto& s : q.support) out.kl_to_prior += s.prob * (std::log(s.prob) - e.log_prob(s.index));
  }
  return out;
}

struct LogMarginalEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::uint64_t draws = 0;  // uniform draws, including rejected ones
};

/// log p(x) = log( sum_{z in support} p(z, x) + sum_{z not in support} p(z, x) ).
/// The first sum is exact (log-sum-exp over the support). The second is
/// (dim - |support|) times the mean of p(z, x) over complement outcomes drawn
/// uniformly by rejection from the uniform prior; with a uniform prior this is
/// the complement-mass fraction (dim - |support|) / dim times the mean
/// likelihood. `joint` returns log p(z, x). `std_error` is the delta-method
/// standard error of the log.
inline LogMarginalEstimate log_marginal_split(const SparseDistribution& q,
                                              const LossOracle<OutcomeId>& joint, OutcomeId dim,
                                              std::size_t num_samples, std::uint64_t seed) {
  detail::require(dim >= 1 && q.size() <= dim, "log_marginal_split: support larger than space");
  for (const auto& e : q.support)
    detail::require(e.index < dim, "log_marginal_split: support outside the outcome space");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  std::vector<double> on_support;
  on_support.reserve(q.size());
  for (const auto& e : q.support) on_support.push_back(joint.eval(e.index).value);
  const double log_support = log_sum_exp(on_support);

  LogMarginalEstimate out;
  const OutcomeId complement = dim - q.size();
  if (complement == 0) {
    out.estimate = log_support;
    return out;
  }
  if (num_samples == 0)
    throw InvalidInput("log_marginal_split: num_samples must be positive when the support is partial");

  std::unordered_set<OutcomeId> in_support;
  for (const auto& e : q.support) in_support.insert(e.index);
  CounterRng rng(seed);
  const std::uint64_t max_draws = 1000 * static_cast<std::uint64_t>(num_samples);
  std::vector<double> terms;
  terms.reserve(num_samples);
  const double log_complement = std::log(static_cast<double>(complement));
  while (terms.size() < num_samples) {
    if (out.draws >= max_draws)
      throw SamplingBudgetExceeded("log_marginal_split: rejection sampling budget exhausted");
    const OutcomeId z = rng.below(dim);
    ++out.draws;
    if (in_support.count(z)) continue;
    terms.push_back(joint.eval(z).value + log_complement);
  }

  double m = log_support;
  for (double v : terms) m = std::max(m, v);
  if (m == kNegInf) {
    out.estimate = kNegInf;
    return out;
  }
  const double a = log_support == kNegInf ? 0.0 : std::exp(log_support - m);
  double mean = 0.0;
  for (double v : terms) mean += std::exp(v - m);
  mean /= static_cast<double>(terms.size());
  double var = 0.0;
  for (double v : terms) {
    const double d = std::exp(v - m) - mean;
    var += d * d;
  }
  const double n = static_cast<double>(terms.size());
  var = terms.size() > 1 ? var / (n - 1.0) : 0.0;
  out.estimate = m + std::log(a + mean);
  out.std_error = std::sqrt(var / n) / (a + mean);
  return out;
}

/// Order statistics of decoder calls within one epoch.
struct CallStats {
  double mean = 0.0;
  double p10 = 0.0;
  double median = 0.0;
  double p90 = 0.0;
};

inline CallStats call_stats(std::span<const double> calls) {
  if (calls.empty()) throw InvalidInput("call_stats: no reports");
  std::vector<double> v(calls.begin(), calls.end());
  CallStats s;
  for (double c : v) s.mean += c;
  s.mean /= static_cast<double>(v.size());
  s.p10 = quantile(v, 0.10);
  s.median = quantile(v, 0.50);
  s.p90 = quantile(v, 0.90);
  return s;
}

/// One CallStats per epoch.
inline std::vector<CallStats> call_curve(const std::vector<std::vector<MarginalReport>>& epochs) {
  if (epochs.empty()) throw InvalidInput("call_curve: no epochs");
  std::vector<CallStats> out;
  out.reserve(epochs.size());
  for (const auto& reports : epochs) {
    std::vector<double> calls;
    calls.reserve(reports.size());
    for (const auto& r : reports) calls.push_back(static_cast<double>(r.calls_used));
    out.push_back(call_stats(calls));
  }
  return out;
}

}  // namespace sparsemarg
