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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sparsemarg/error.hpp"

namespace sparsemarg {

/// Identifier of one outcome of a latent space: a category index, or the
/// packed encoding of a structure.
using OutcomeId = std::uint64_t;

struct SupportEntry {
  OutcomeId index = 0;
  double prob = 0.0;

  friend bool operator==(const SupportEntry&, const SupportEntry&) = default;
};

/// A distribution stored by its support only. Entries are sorted by index and
/// carry strictly positive probabilities; every other outcome of the `dim`
/// outcomes has probability zero. `threshold` is the tau of max(s - tau, 0)
/// for sparsemax-like mappings.
struct SparseDistribution {
  std::vector<SupportEntry> support;
  double threshold = 0.0;
  OutcomeId dim = 0;

  std::size_t size() const noexcept { return support.size(); }

  /// Probability of an arbitrary outcome (zero off-support).
  double prob(OutcomeId index) const noexcept {
    auto it = std::lower_bound(
        support.begin(), support.end(), index,
        [](const SupportEntry& e, OutcomeId i) { return e.index < i; });
    return (it != support.end() && it->index == index) ? it->prob : 0.0;
  }

  bool contains(OutcomeId index) const noexcept { return prob(index) > 0.0; }

  std::vector<OutcomeId> indices() const {
    std::vector<OutcomeId> out;
    out.reserve(support.size());
    for (const auto& e : support) out.push_back(e.index);
    return out;
  }

  std::vector<double> probs() const {
    std::vector<double> out;
    out.reserve(support.size());
    for (const auto& e : support) out.push_back(e.prob);
    return out;
  }
};

/// Throws InvalidInput unless `p` satisfies the SparseDistribution invariants.
inline void validate(const SparseDistribution& p, double sum_tol = 1e-12) {
  detail::require(!p.support.empty(), "distribution has empty support");
  double total = 0.0;
  for (std::size_t i = 0; i < p.support.size(); ++i) {
    const auto& e = p.support[i];
    detail::require(e.prob > 0.0 && e.prob <= 1.0 + sum_tol,
                    "support probability outside (0, 1]");
    detail::require(e.index < p.dim, "support index outside the outcome space");
    if (i > 0)
      detail::require(p.support[i - 1].index < e.index,
                      "support indices must be unique and ascending");
    total += e.prob;
  }
  detail::require(std::abs(total - 1.0) <= sum_tol,
                  "support probabilities do not sum to one");
}

/// Dense vector of length `dim` with zeros off-support.
inline std::vector<double> densify(const SparseDistribution& p) {
  std::vector<double> out(static_cast<std::size_t>(p.dim), 0.0);
  for (const auto& e : p.support) out[static_cast<std::size_t>(e.index)] = e.prob;
  return out;
}

inline void check_finite(std::span<const double> s, const char* what = "scores") {
  detail::require(!s.empty(), std::string(what) + " must be non-empty");
  for (double v : s)
    detail::require(std::isfinite(v), std::string(what) + " must be finite");
}

namespace detail {

/// Descending by score, ascending by index on ties.
struct ScoreOrder {
  std::span<const double> s;
  bool operator()(std::size_t a, std::size_t b) const noexcept {
    return s[a] > s[b] || (s[a] == s[b] && a < b);
  }
};

/// Largest r <= order.size() satisfying Held's condition
/// 1 + r * s_(r) > sum_{j<=r} s_(j) on the sorted prefix, and the resulting
/// threshold. `order` must be sorted by ScoreOrder.
inline std::pair<std::size_t, double> held_threshold(
    std::span<const double> s, std::span<const std::size_t> order) {
  double cumsum = 0.0, cum_at_r = 0.0;
  std::size_t r = 0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const double v = s[order[j]];
    cumsum += v;
    if (v > (cumsum - 1.0) / static_cast<double>(j + 1)) {
      r = j + 1;
      cum_at_r = cumsum;
    }
  }
  return {r, (cum_at_r - 1.0) / static_cast<double>(r)};
}

/// Enforces the in-support rule s_i - tau > 0 exactly, recomputing tau from
/// the selected set until the two agree. Entries tied with tau are excluded.
inline SparseDistribution finalize_threshold(std::span<const double> s,
                                             double tau) {
  std::vector<std::size_t> members;
  for (int pass = 0; pass < 8; ++pass) {
    members.clear();
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] - tau > 0.0) {
        members.push_back(i);
        sum += s[i];
      }
    if (members.empty()) {
      // Only reachable through rounding on a near-uniform input: fall back to
      // the maximizer.
      std::size_t best = 0;
      for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] > s[best]) best = i;
      members.push_back(best);
      tau = s[best] - 1.0;
      break;
    }
    const double next = (sum - 1.0) / static_cast<double>(members.size());
    if (next == tau) break;
    tau = next;
  }
  SparseDistribution out;
  out.dim = s.size();
  out.threshold = tau;
  out.support.reserve(members.size());
  for (std::size_t i : members) {
    const double p = s[i] - tau;
    if (p > 0.0) out.support.push_back({i, p});
  }
  return out;
}

}  // namespace detail

/// Sparsemax by a full sort followed by Held's scan. O(K log K). Kept as the
/// reference path for sparsemax().
inline SparseDistribution sparsemax_sort(std::span<const double> s) {
  check_finite(s);
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), detail::ScoreOrder{s});
  return detail::finalize_threshold(s, detail::held_threshold(s, order).second);
}

/// Euclidean projection of `s` onto the probability simplex,
/// max(s - tau, 0). Finds the support by sorting only the top-k entries and
/// doubling k until the threshold certifies that nothing below the prefix
/// can enter.
inline SparseDistribution sparsemax(std::span<const double> s) {
  check_finite(s);
  const std::size_t K = s.size();
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const detail::ScoreOrder cmp{s};

  std::size_t k = std::min<std::size_t>(K, 8);
  for (;;) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), cmp);
    const auto [r, tau] = detail::held_threshold(
        s, std::span<const std::size_t>(order.data(), k));
    bool done = (r < k) || (k == K);
    if (!done) {
      double rest_max = s[order[k]];
      for (std::size_t j = k + 1; j < K; ++j) rest_max = std::max(rest_max, s[order[j]]);
      done = rest_max <= tau;
    }
    if (done) return detail::finalize_threshold(s, tau);
    k = std::min(K, 2 * k);
  }
}

/// v^T J for J = d sparsemax(s) / ds. On the support this is `upstream` minus
/// its support mean; zero elsewhere.
inline std::vector<double> sparsemax_vjp(std::span<const double> s,
                                         const SparseDistribution& p,
                                         std::span<const double> upstream) {
  detail::require_same_size(s.size(), static_cast<std::size_t>(p.dim),
                            "sparsemax_vjp scores/distribution");
  detail::require_same_size(upstream.size(), s.size(), "sparsemax_vjp upstream");
  std::vector<double> out(s.size(), 0.0);
  if (p.support.empty()) return out;
  double mean = 0.0;
  for (const auto& e : p.support) mean += upstream[e.index];
  mean /= static_cast<double>(p.support.size());
  for (const auto& e : p.support) out[e.index] = upstream[e.index] - mean;
  return out;
}

/// Dense softmax with max subtraction.
inline std::vector<double> softmax_ref(std::span<const double> s) {
  check_finite(s);
  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += (out[i] = std::exp(s[i] - m));
  for (double& v : out) v /= z;
  return out;
}

/// v^T J for the softmax Jacobian diag(p) - p p^T.
inline std::vector<double> softmax_vjp(std::span<const double> p,
                                       std::span<const double> upstream) {
  detail::require_same_size(p.size(), upstream.size(), "softmax_vjp");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * upstream[i];
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (upstream[i] - dot);
  return out;
}

/// Shannon entropy in nats over the support.
inline double entropy(const SparseDistribution& p) noexcept {
  double h = 0.0;
  for (const auto& e : p.support) h -= e.prob * std::log(e.prob);
  return std::max(h, 0.0);
}

inline double entropy(std::span<const double> dense) noexcept {
  double h = 0.0;
  for (double v : dense)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

}  // namespace sparsemarg
