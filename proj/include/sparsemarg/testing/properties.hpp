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

// Randomized property checks shared by `sparsemarg check` and the acceptance
// binary. Each check draws its own instances from (trials, seed) and
// compares the library against an independent oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "sparsemarg/bitvec.hpp"
#include "sparsemarg/estimators.hpp"
#include "sparsemarg/marginal.hpp"
#include "sparsemarg/numeric.hpp"
#include "sparsemarg/rng.hpp"
#include "sparsemarg/simplex.hpp"
#include "sparsemarg/sparsemap.hpp"
#include "sparsemarg/testing/oracles.hpp"
#include "sparsemarg/topk.hpp"

namespace sparsemarg::testing {

struct PropertyResult {
  std::string name;
  std::size_t trials = 0;   // instances drawn
  std::size_t checked = 0;  // instances the property applies to
  std::size_t passed = 0;
  double worst = 0.0;  // largest error seen (or a count, see the check)
  double tolerance = 0.0;
  std::size_t min_checked = 1;
  double min_pass_rate = 1.0;

  void record(double error) {
    ++checked;
    worst = std::max(worst, error);
    if (error <= tolerance) ++passed;
  }
  void record(bool ok) {
    ++checked;
    if (ok) ++passed;
  }
  bool ok() const {
    return checked >= min_checked &&
           static_cast<double>(passed) >= min_pass_rate * static_cast<double>(checked);
  }
};

/// Central differences at h = 1e-6 carry about 1e-10 of absolute round-off,
/// so finite-difference errors are measured against a gradient scale of at
/// least this much.
inline constexpr double kFdScaleFloor = 1e-3;

namespace detail {

inline PropertyResult start(std::string name, std::size_t trials, double tolerance, std::size_t min_checked = 1) {
  PropertyResult r;
  r.name = std::move(name);
  r.trials = trials;
  r.tolerance = tolerance;
  r.min_checked = min_checked;
  return r;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline std::set<Bits> bit_set(const std::vector<Structure>& zs) {
  std::set<Bits> out;
  for (const auto& z : zs) out.insert(z.bits);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simplex

inline PropertyResult check_sparsemax_oracle(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemax_vs_exhaustive_qp", trials, 1e-8);
  CounterRng rng(seed, 1);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 2 + rng.below(9), 0.2 + 2.0 * rng.uniform());
    r.record(max_abs_diff(densify(sparsemax(s)), exhaustive_sparsemax(s)));
  }
  return r;
}

inline PropertyResult check_sparsemax_valid(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemax_on_simplex", trials, 1e-12);
  CounterRng rng(seed, 2);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 1 + rng.below(200), 3.0);
    const auto p = sparsemax(s);
    double sum = 0.0, neg = 0.0;
    for (const auto& e : p.support) {
      sum += e.prob;
      neg = std::max(neg, -e.prob);
    }
    r.record(std::max(std::abs(sum - 1.0), neg));
  }
  return r;
}

/// Stable points only: the support must not change under any +-h
/// perturbation. `min_checked` stable points are required.
inline PropertyResult check_sparsemax_vjp(std::size_t trials, std::uint64_t seed, std::size_t min_checked = 1) {
  auto r = detail::start("sparsemax_vjp_vs_fd", trials, 1e-4, min_checked);
  CounterRng rng(seed, 3);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 2 + rng.below(9), 0.5);
    const auto up = random_vector(rng, s.size());
    const auto p = sparsemax(s);
    bool stable = true;
    const auto fd = fd_gradient(
        [&](const std::vector<double>& x) {
          const auto q = sparsemax(x);
          if (q.indices() != p.indices()) stable = false;
          return detail::dot(densify(q), up);
        },
        s, 1e-6);
    if (stable) r.record(relative_error(sparsemax_vjp(s, p, up), fd, kFdScaleFloor));
  }
  return r;
}

// ---------------------------------------------------------------------------
// topk

/// Every certified result must equal full sparsemax; `worst` counts the
/// false certificates.
inline PropertyResult check_topk_certificate(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("topk_certificate_sound", trials, 1e-12);
  CounterRng rng(seed, 4);
  std::size_t false_certificates = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 2 + rng.below(30), 0.5 + 3.0 * rng.uniform());
    const std::size_t k = 1 + rng.below(s.size());
    const auto t = topk_sparsemax(s, k);
    if (!t.certificate) continue;
    const double err = max_abs_diff(densify(t.distribution), densify(sparsemax(s)));
    ++r.checked;
    if (err <= r.tolerance) ++r.passed;
    else ++false_certificates;
  }
  r.worst = static_cast<double>(false_certificates);
  return r;
}

inline PropertyResult check_topk_oracle(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("topk_vs_cardinality_qp", trials, 1e-12);
  CounterRng rng(seed, 5);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 2 + rng.below(9), 0.3 + rng.uniform());
    const std::size_t k = 1 + rng.below(s.size());
    r.record(max_abs_diff(densify(topk_sparsemax(s, k).distribution), exhaustive_sparsemax(s, k)));
  }
  return r;
}

inline PropertyResult check_topk_vjp(std::size_t trials, std::uint64_t seed, std::size_t min_checked = 1) {
  auto r = detail::start("topk_vjp_vs_fd", trials, 1e-4, min_checked);
  CounterRng rng(seed, 6);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t K = 2 + rng.below(9);
    const std::size_t k = 1 + rng.below(K);
    const auto s = random_vector(rng, K, 0.5);
    const auto up = random_vector(rng, K);
    const auto t = topk_sparsemax(s, k);
    auto kept = t.top.indices();
    std::sort(kept.begin(), kept.end());
    bool stable = true;
    const auto fd = fd_gradient(
        [&](const std::vector<double>& x) {
          const auto q = topk_sparsemax(x, k);
          auto qk = q.top.indices();
          std::sort(qk.begin(), qk.end());
          if (q.distribution.indices() != t.distribution.indices() || qk != kept) stable = false;
          return detail::dot(densify(q.distribution), up);
        },
        s, 1e-6);
    if (stable) r.record(relative_error(topk_sparsemax_vjp(s, k, t, up), fd, kFdScaleFloor));
  }
  return r;
}

// ---------------------------------------------------------------------------
// bitvec

/// Integer-valued scores on a share of the trials make exact ties common.
inline std::vector<double> tie_prone_scores(CounterRng& rng, std::size_t D, bool integer) {
  std::vector<double> t(D);
  for (double& v : t) v = integer ? static_cast<double>(static_cast<int>(rng.below(3)) - 1) : rng.normal();
  return t;
}

inline PropertyResult check_kbest(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("kbest_vs_enumeration", trials, 0.0);
  CounterRng rng(seed, 7);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(12);
    const std::size_t k = 1 + rng.below(32);
    const auto t = tie_prone_scores(rng, D, i % 3 == 0);
    std::vector<Bits> got;
    for (const auto& z : kbest(t, k)) got.push_back(z.bits);
    r.record(got == brute_force_kbest(t, k));
  }
  return r;
}

inline PropertyResult check_budget(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("budget_oracle_vs_enumeration", trials, 0.0);
  CounterRng rng(seed, 8);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(12);
    const std::size_t B = 1 + rng.below(D);
    const auto t = tie_prone_scores(rng, D, i % 2 == 0);
    r.record(budget_map_oracle(t, B).bits == brute_force_budget(t, B));
  }
  return r;
}

// ---------------------------------------------------------------------------
// sparsemap

inline PropertyResult check_sparsemap_identity(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemap_identity_vs_sparsemax", trials, 1e-6);
  CounterRng rng(seed, 9);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t = random_vector(rng, 1 + rng.below(10), 0.3 + rng.uniform());
    r.record(max_abs_diff(densify(sparsemap(IdentityPolytope(t.size()), t).distribution), densify(sparsemax(t))));
  }
  return r;
}

inline PropertyResult check_sparsemap_clip(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemap_bitvec_vs_clip", trials, 1e-5);
  CounterRng rng(seed, 10);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(10);
    const auto t = random_vector(rng, D, 0.3 + rng.uniform());
    const auto s = sparsemap(BitVectorPolytope(D), t);
    r.record(s.converged ? max_abs_diff(s.moments, clip_moments(t)) : 1.0);
  }
  return r;
}

/// The vertex QP is slow at D = 10 (2^10 vertices); keep trials modest.
inline PropertyResult check_sparsemap_vertex_qp(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemap_vs_vertex_qp", trials, 1e-5);
  CounterRng rng(seed, 11);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(10);
    const bool budget = i % 2 == 1;
    const std::size_t B = budget ? 1 + rng.below(D) : D;
    const auto t = random_vector(rng, D, 0.3 + rng.uniform());
    const auto s = budget ? sparsemap(BudgetPolytope(D, B), t) : sparsemap(BitVectorPolytope(D), t);
    r.record(max_abs_diff(s.moments, vertex_qp_moments(all_bit_vectors(D, B), t)));
  }
  return r;
}

inline PropertyResult check_sparsemap_support(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemap_support_at_most_d_plus_1", trials, 0.0);
  CounterRng rng(seed, 12);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(32);
    const auto t = random_vector(rng, D, 0.3 + rng.uniform());
    const auto s = i % 2 ? sparsemap(BudgetPolytope(D, 1 + rng.below(D)), t) : sparsemap(BitVectorPolytope(D), t);
    const double excess = static_cast<double>(s.structures.size()) - static_cast<double>(D + 1);
    r.record(s.converged && excess <= 0.0);
    r.worst = std::max(r.worst, excess);
  }
  return r;
}

/// At the solution, tau - <a_z, t - mu> >= 0 for the structure a fresh MAP
/// query returns on the residual t - mu. `worst` is the most negative such
/// slack, sign-flipped.
inline PropertyResult check_sparsemap_dual(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparsemap_dual_feasible", trials, 1e-9);
  CounterRng rng(seed, 13);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 1 + rng.below(10);
    const auto t = random_vector(rng, D, 0.3 + rng.uniform());
    const auto s = sparsemap(BitVectorPolytope(D), t);
    std::vector<double> residual(D);
    for (std::size_t j = 0; j < D; ++j) residual[j] = t[j] - s.moments[j];
    double tau = 0.0;
    for (const auto& z : s.structures) tau += structure_score(z.bits, residual);
    tau /= static_cast<double>(s.structures.size());
    const double nu = tau - map_oracle(residual).score;
    r.record(std::max(0.0, -nu));
  }
  return r;
}

inline PropertyResult check_sparsemap_vjp(std::size_t trials, std::uint64_t seed, std::size_t min_checked = 1) {
  auto r = detail::start("sparsemap_vjp_vs_fd", trials, 1e-3, min_checked);
  CounterRng rng(seed, 14);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t D = 2 + rng.below(5);
    const std::size_t B = 1 + rng.below(D);
    const bool budget = i % 2 == 1;
    const auto t = random_vector(rng, D, 0.7);
    const auto up = random_vector(rng, D);
    auto solve = [&](std::span<const double> x) {
      return budget ? sparsemap(BudgetPolytope(D, B), x) : sparsemap(BitVectorPolytope(D), x);
    };
    const auto s = solve(t);
    const auto support = detail::bit_set(s.structures);
    bool stable = true;
    const auto fd = fd_gradient(
        [&](const std::vector<double>& x) {
          const auto q = solve(x);
          if (detail::bit_set(q.structures) != support) stable = false;
          return detail::dot(q.moments, up);
        },
        t, 1e-5);
    if (stable) r.record(relative_error(sparsemap_vjp(s, up), fd, kFdScaleFloor));
  }
  return r;
}

// ---------------------------------------------------------------------------
// marginal

inline PropertyResult check_sparse_expectation(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sparse_expectation_vs_dense_sum", trials, 1e-12);
  CounterRng rng(seed, 15);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t K = 2 + rng.below(30);
    const auto s = random_vector(rng, K, 1.5);
    const auto table = random_vector(rng, K);
    const auto p = sparsemax(s);
    const LossOracle<OutcomeId> loss([&](const OutcomeId& z) { return LossEval{table[z], {}}; });
    const auto rep = sparse_expectation(p, loss);
    const bool calls_ok = rep.calls_used == p.size() && loss.calls() == p.size();
    r.record(calls_ok ? std::abs(rep.expected_loss - detail::dot(densify(p), table)) : 1.0);
  }
  return r;
}

inline PropertyResult check_mapping_grad(std::size_t trials, std::uint64_t seed, std::size_t min_checked = 1) {
  auto r = detail::start("grad_through_sparsemax_vs_fd", trials, 1e-4, min_checked);
  CounterRng rng(seed, 16);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t K = 2 + rng.below(9);
    const auto s = random_vector(rng, K, 0.5);
    const auto table = random_vector(rng, K);
    const auto p = sparsemax(s);
    std::vector<double> on_support;
    for (const auto& e : p.support) on_support.push_back(table[e.index]);
    bool stable = true;
    const auto fd = fd_gradient(
        [&](const std::vector<double>& x) {
          const auto q = sparsemax(x);
          if (q.indices() != p.indices()) stable = false;
          return detail::dot(densify(q), table);
        },
        s, 1e-6);
    if (stable) r.record(relative_error(grad_scores_through_mapping(s, p, on_support), fd, kFdScaleFloor));
  }
  return r;
}

/// Toy D-bit joint log p(z, x) = -D log 2 + <a_z, w> + c with the posterior
/// approximation q = sparsemax over the enumerated joint.
struct SplitIsInstance {
  std::size_t D = 10;
  std::vector<double> w;
  double c = -3.0;

  double log_joint(OutcomeId z) const {
    return -static_cast<double>(D) * std::log(2.0) + structure_score(unpack_bits(z, D), w) + c;
  }
  double exact() const {
    std::vector<double> all(std::size_t{1} << D);
    for (OutcomeId z = 0; z < all.size(); ++z) all[z] = log_joint(z);
    return log_sum_exp(all);
  }
};

/// Counts runs whose estimate lies within 3 standard errors of the exact
/// log-marginal; passes at a 99% rate.
inline PropertyResult check_split_is_coverage(std::size_t trials, std::uint64_t seed,
                                              std::size_t samples = 2000) {
  auto r = detail::start("split_is_within_3_se", trials, 3.0);
  r.min_pass_rate = 0.99;
  CounterRng rng(seed, 17);
  for (std::size_t i = 0; i < trials; ++i) {
    SplitIsInstance inst;
    inst.w = random_vector(rng, inst.D, 0.5);
    const LossOracle<OutcomeId> joint([&](const OutcomeId& z) { return LossEval{inst.log_joint(z), {}}; });
    std::vector<double> s(std::size_t{1} << inst.D);
    for (OutcomeId z = 0; z < s.size(); ++z) s[z] = inst.log_joint(z);
    const auto est = log_marginal_split(sparsemax(s), joint, s.size(), samples, rng());
    const double dev = std::abs(est.estimate - inst.exact());
    r.record(est.std_error > 0.0 ? dev / est.std_error : (dev == 0.0 ? 0.0 : 1e300));
  }
  return r;
}

inline PropertyResult check_split_is_full_support(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("split_is_full_support_exact", trials, 1e-12);
  CounterRng rng(seed, 18);
  for (std::size_t i = 0; i < trials; ++i) {
    SplitIsInstance inst;
    inst.D = 1 + rng.below(8);
    inst.w = random_vector(rng, inst.D, 0.5);
    const OutcomeId dim = OutcomeId{1} << inst.D;
    SparseDistribution q;
    q.dim = dim;
    for (OutcomeId z = 0; z < dim; ++z) q.support.push_back({z, 1.0 / static_cast<double>(dim)});
    const LossOracle<OutcomeId> joint([&](const OutcomeId& z) { return LossEval{inst.log_joint(z), {}}; });
    const auto est = log_marginal_split(q, joint, dim, 0, rng());
    r.record(est.std_error == 0.0 ? std::abs(est.estimate - inst.exact()) : 1.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// estimators

inline PropertyResult check_dense_grad(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("dense_grad_vs_fd", trials, 1e-6);
  CounterRng rng(seed, 19);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = random_vector(rng, 2 + rng.below(9), 2.0);
    const auto table = random_vector(rng, s.size());
    const LossOracle<OutcomeId> loss([&](const OutcomeId& z) { return LossEval{table[z], {}}; });
    const auto fd = fd_gradient([&](const std::vector<double>& x) { return detail::dot(plain_softmax(x), table); },
                                s, 1e-6);
    r.record(relative_error(dense_grad(s, loss).grad_scores, fd, kFdScaleFloor));
  }
  return r;
}

/// Expectation of the single-sample estimator over every sample, with a
/// frozen baseline, against the dense gradient.
inline PropertyResult check_sfe_unbiased(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sfe_unbiased_by_enumeration", trials, 1e-10);
  CounterRng rng(seed, 20);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t K = 2 + rng.below(9);
    const auto s = random_vector(rng, K, 2.0);
    const auto table = random_vector(rng, K);
    const double baseline = rng.normal();
    const auto p = plain_softmax(s);
    std::vector<double> mean(K, 0.0);
    for (std::size_t z = 0; z < K; ++z) {
      const auto g = sfe_grad_given(p, z, table[z], baseline);
      for (std::size_t j = 0; j < K; ++j) mean[j] += p[z] * g[j];
    }
    r.record(max_abs_diff(mean, exact_softmax_grad(s, table)));
  }
  return r;
}

inline PropertyResult check_sum_and_sample_unbiased(std::size_t trials, std::uint64_t seed) {
  auto r = detail::start("sum_and_sample_unbiased_by_enumeration", trials, 1e-10);
  CounterRng rng(seed, 21);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t K = 2 + rng.below(9);
    const std::size_t k = 1 + rng.below(K - 1);
    const auto s = random_vector(rng, K, 2.0);
    const auto table = random_vector(rng, K);
    const auto p = plain_softmax(s);
    const auto split = sum_and_sample_split(p, s, k);
    std::vector<double> top_losses;
    std::vector<std::uint8_t> in_top(K, 0);
    for (std::size_t z : split.top) {
      top_losses.push_back(table[z]);
      in_top[z] = 1;
    }
    std::vector<double> mean(K, 0.0);
    for (std::size_t z = 0; z < K; ++z) {
      if (in_top[z]) continue;
      const auto g = sum_and_sample_given(p, split, top_losses, z, table[z]);
      for (std::size_t j = 0; j < K; ++j) mean[j] += p[z] / split.complement_mass * g[j];
    }
    r.record(max_abs_diff(mean, exact_softmax_grad(s, table)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Suites

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"simplex", "topk", "bitvec", "sparsemap", "marginal", "estimators"};
  return names;
}

/// Runs every check of the named suite. Throws InvalidInput on an unknown
/// name. Expensive checks run on a fraction of `trials`.
inline std::vector<PropertyResult> run_suite(const std::string& suite, std::size_t trials, std::uint64_t seed) {
  const std::size_t tenth = std::max<std::size_t>(1, trials / 10);
  if (suite == "simplex")
    return {check_sparsemax_oracle(trials, seed), check_sparsemax_valid(trials, seed),
            check_sparsemax_vjp(trials, seed)};
  if (suite == "topk")
    return {check_topk_certificate(trials, seed), check_topk_oracle(trials, seed), check_topk_vjp(trials, seed)};
  if (suite == "bitvec") return {check_kbest(trials, seed), check_budget(trials, seed)};
  if (suite == "sparsemap")
    return {check_sparsemap_identity(trials, seed), check_sparsemap_clip(trials, seed),
            check_sparsemap_vertex_qp(tenth, seed), check_sparsemap_support(trials, seed),
            check_sparsemap_dual(trials, seed), check_sparsemap_vjp(trials, seed)};
  if (suite == "marginal")
    return {check_sparse_expectation(trials, seed), check_mapping_grad(trials, seed),
            check_split_is_coverage(std::max<std::size_t>(100, tenth), seed), check_split_is_full_support(tenth, seed)};
  if (suite == "estimators")
    return {check_dense_grad(trials, seed), check_sfe_unbiased(trials, seed),
            check_sum_and_sample_unbiased(trials, seed)};
  throw InvalidInput("unknown suite: " + suite);
}

}  // namespace sparsemarg::testing
