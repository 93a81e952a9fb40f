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
#include <numeric>
#include <span>
#include <vector>

#include "sparsemarg/error.hpp"
#include "sparsemarg/simplex.hpp"

namespace sparsemarg {

struct KeptEntry {
  std::size_t index = 0;
  double score = 0.0;
};

/// The k largest entries of a score vector, largest first. Ties are broken
/// by ascending index.
struct TopKResult {
  std::vector<KeptEntry> kept;
  std::size_t masked_count = 0;

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    out.reserve(kept.size());
    for (const auto& e : kept) out.push_back(e.index);
    return out;
  }
};

inline TopKResult top_k(std::span<const double> s, std::size_t k) {
  if (k < 1) throw InvalidInput("top_k: k must be at least 1");
  check_finite(s);
  const std::size_t keep = std::min(k, s.size());
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), detail::ScoreOrder{s});
  TopKResult out;
  out.kept.reserve(keep);
  for (std::size_t j = 0; j < keep; ++j) out.kept.push_back({order[j], s[order[j]]});
  out.masked_count = s.size() - keep;
  return out;
}

/// Output of sparsemax(top_k(s)). `certificate` is set when the support is
/// strictly smaller than k, in which case the result is the unconstrained
/// sparsemax.
struct TopKSparsemaxResult {
  SparseDistribution distribution;
  bool certificate = false;
  TopKResult top;
};

namespace detail {

/// Sparsemax over the kept entries, with indices mapped back into the full
/// space. The masked coordinates never enter the computation.
inline SparseDistribution sparsemax_on_kept(const TopKResult& top, std::size_t dim) {
  std::vector<double> sub;
  sub.reserve(top.kept.size());
  for (const auto& e : top.kept) sub.push_back(e.score);
  SparseDistribution local = sparsemax(sub);
  SparseDistribution out;
  out.dim = dim;
  out.threshold = local.threshold;
  out.support.reserve(local.support.size());
  for (const auto& e : local.support)
    out.support.push_back({top.kept[static_cast<std::size_t>(e.index)].index, e.prob});
  std::sort(out.support.begin(), out.support.end(),
            [](const SupportEntry& a, const SupportEntry& b) { return a.index < b.index; });
  return out;
}

}  // namespace detail

inline TopKSparsemaxResult topk_sparsemax(std::span<const double> s, std::size_t k) {
  TopKSparsemaxResult out;
  out.top = top_k(s, k);
  out.distribution = detail::sparsemax_on_kept(out.top, s.size());
  out.certificate = out.distribution.size() < k;
  return out;
}

/// v^T J for the composition: the sparsemax Jacobian on the kept coordinates
/// times the 0/1 diagonal Jacobian of the mask. Masked coordinates get zero.
inline std::vector<double> topk_sparsemax_vjp(std::span<const double> s, std::size_t k,
                                              const TopKSparsemaxResult& result,
                                              std::span<const double> upstream) {
  detail::require_same_size(upstream.size(), s.size(), "topk_sparsemax_vjp upstream");
  detail::require_same_size(static_cast<std::size_t>(result.distribution.dim), s.size(),
                            "topk_sparsemax_vjp result");
  detail::require(result.top.kept.size() == std::min(k, s.size()),
                  "topk_sparsemax_vjp: result was computed with a different k");
  // The support is a subset of the kept set, so the kept-space Jacobian
  // restricted to the support is the full answer.
  return sparsemax_vjp(s, result.distribution, upstream);
}

}  // namespace sparsemarg
