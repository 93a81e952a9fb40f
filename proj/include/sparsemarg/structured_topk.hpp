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

#include <span>
#include <vector>

#include "sparsemarg/bitvec.hpp"
#include "sparsemarg/simplex.hpp"

namespace sparsemarg {

/// Top-k sparsemax over the 2^D structures of a bit-vector space, where the
/// score of structure z is <a_z, t>. The k best structures come from kbest();
/// only those k scores are ever projected.
struct StructuredTopK {
  std::vector<Structure> structures;  // support, aligned with `probs`
  std::vector<double> probs;
  double threshold = 0.0;
  bool certificate = false;
  std::size_t k = 0;

  /// The same distribution keyed by packed ids.
  SparseDistribution distribution() const {
    SparseDistribution out;
    const std::size_t D = structures.empty() ? 0 : structures.front().dim();
    out.dim = OutcomeId{1} << D;
    out.threshold = threshold;
    for (std::size_t i = 0; i < structures.size(); ++i)
      out.support.push_back({pack_bits(structures[i].bits), probs[i]});
    std::sort(out.support.begin(), out.support.end(),
              [](const SupportEntry& a, const SupportEntry& b) { return a.index < b.index; });
    return out;
  }
};

inline StructuredTopK structured_topk_sparsemax(std::span<const double> t, std::size_t k) {
  std::vector<Structure> best = kbest(t, k);
  std::vector<double> scores;
  scores.reserve(best.size());
  for (const auto& z : best) scores.push_back(z.score);
  const SparseDistribution local = sparsemax(scores);

  StructuredTopK out;
  out.k = k;
  out.threshold = local.threshold;
  for (const auto& e : local.support) {
    out.structures.push_back(best[static_cast<std::size_t>(e.index)]);
    out.probs.push_back(e.prob);
  }
  out.certificate = out.structures.size() < k;
  return out;
}

/// Gradient w.r.t. t of sum_z p_z * upstream_z, with upstream given on the
/// support. Scores are linear in t (ds_z/dt = a_z), so this is
/// sum_z [sparsemax vjp]_z a_z.
inline std::vector<double> structured_topk_vjp(const StructuredTopK& result,
                                               std::span<const double> upstream_on_support) {
  detail::require_same_size(upstream_on_support.size(), result.structures.size(),
                            "structured_topk_vjp");
  const std::size_t n = result.structures.size();
  std::vector<double> out(n == 0 ? 0 : result.structures.front().dim(), 0.0);
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : upstream_on_support) mean += v;
  mean /= static_cast<double>(n);
  for (std::size_t z = 0; z < n; ++z) {
    const double g = upstream_on_support[z] - mean;
    const auto& bits = result.structures[z].bits;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) out[i] += g;
  }
  return out;
}

}  // namespace sparsemarg
