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
#include <functional>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "sparsemarg/error.hpp"
#include "sparsemarg/simplex.hpp"

namespace sparsemarg {

using Bits = std::vector<std::uint8_t>;

/// <bits, t>, accumulated in index order. Every score in the library goes
/// through this function so that equal structures get bitwise-equal scores.
inline double structure_score(const Bits& bits, std::span<const double> t) {
  detail::require_same_size(bits.size(), t.size(), "structure_score");
  double s = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) s += t[i];
  return s;
}

/// One global configuration a_z of D binary variables, with its cached score.
struct Structure {
  Bits bits;
  double score = 0.0;

  std::size_t dim() const noexcept { return bits.size(); }
  std::size_t active_count() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
  }

  static Structure from_bits(Bits bits, std::span<const double> t) {
    const double s = structure_score(bits, t);
    return Structure{std::move(bits), s};
  }
};

/// Identity is by bit content only.
inline bool operator==(const Structure& a, const Structure& b) { return a.bits == b.bits; }

struct BitsHash {
  std::size_t operator()(const Bits& b) const noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (auto v : b) h = (h ^ v) * 0x100000001B3ULL;
    return static_cast<std::size_t>(h);
  }
};

/// Score descending, then lexicographically smallest bits.
inline bool ranks_before(const Structure& a, const Structure& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.bits < b.bits;
}

/// Packs bits with bit 0 as the most significant, so ascending ids follow
/// lexicographic order of the bit-vectors. D must be at most 62.
inline OutcomeId pack_bits(const Bits& bits) {
  detail::require(bits.size() <= 62, "pack_bits: at most 62 variables");
  OutcomeId id = 0;
  for (auto v : bits) id = (id << 1) | (v ? 1u : 0u);
  return id;
}

inline Bits unpack_bits(OutcomeId id, std::size_t D) {
  detail::require(D <= 62, "unpack_bits: at most 62 variables");
  Bits bits(D);
  for (std::size_t i = 0; i < D; ++i) bits[D - 1 - i] = static_cast<std::uint8_t>((id >> i) & 1u);
  return bits;
}

/// argmax_z <a_z, t> over all of {0,1}^D: bit i is set iff t_i >= 0.
inline Structure map_oracle(std::span<const double> t) {
  check_finite(t, "variable scores");
  Bits bits(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) bits[i] = t[i] >= 0.0 ? 1 : 0;
  return Structure::from_bits(std::move(bits), t);
}

/// argmax_z <a_z, t> subject to at most B active bits: the non-negative
/// entries among the B largest scores. Equal scores at the budget boundary
/// go to the higher index. The result is the lexicographically smallest of
/// the maximizers with the most active bits.
inline Structure budget_map_oracle(std::span<const double> t, std::size_t budget) {
  check_finite(t, "variable scores");
  if (budget < 1 || budget > t.size())
    throw InvalidInput("budget_map_oracle: budget must lie in [1, D]");
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return t[a] > t[b] || (t[a] == t[b] && a > b);
  });
  Bits bits(t.size(), 0);
  for (std::size_t j = 0; j < budget; ++j)
    if (t[order[j]] >= 0.0) bits[order[j]] = 1;
  return Structure::from_bits(std::move(bits), t);
}

/// Every configuration of D <= 20 variables, ordered by ranks_before.
inline std::vector<Structure> enumerate_all(std::span<const double> t) {
  check_finite(t, "variable scores");
  if (t.size() > 20) throw EnumerationTooLarge("enumerate_all: D must be at most 20");
  const std::size_t D = t.size();
  std::vector<Structure> out;
  out.reserve(std::size_t{1} << D);
  for (OutcomeId id = 0; id < (OutcomeId{1} << D); ++id)
    out.push_back(Structure::from_bits(unpack_bits(id, D), t));
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

/// The k highest-scoring configurations, ordered by ranks_before.
///
/// Every configuration is the MAP configuration with some set F of bits
/// flipped, at cost sum_{i in F} |t_i|. Flip sets are generated in order of
/// cost by a best-first search over positions sorted by |t_i|: a set whose
/// largest position is j has two successors, one that appends j + 1 and one
/// that moves j to j + 1. Each set is reached exactly once.
///
/// Candidates whose cost ties the k-th one (within rounding) are also
/// generated so the final ordering can be resolved on the direct scores.
inline std::vector<Structure> kbest(std::span<const double> t, std::size_t k) {
  check_finite(t, "variable scores");
  if (k < 1) throw InvalidInput("kbest: k must be at least 1");
  const std::size_t D = t.size();
  if (D < 63) k = static_cast<std::size_t>(std::min<std::uint64_t>(k, std::uint64_t{1} << D));

  const Structure best = map_oracle(t);
  std::vector<std::size_t> pos(D);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    const double ca = std::abs(t[a]), cb = std::abs(t[b]);
    return ca < cb || (ca == cb && a < b);
  });
  std::vector<double> cost(D);
  double scale = 1.0;
  for (std::size_t j = 0; j < D; ++j) {
    cost[j] = std::abs(t[pos[j]]);
    scale += cost[j];
  }
  const double tie_eps = 1e-12 * scale;

  struct Node {
    double cost;
    std::size_t last;    // position in `pos` of the largest flipped element
    std::ptrdiff_t parent;  // node holding the rest of the flip set, -1 if none
  };
  std::vector<Node> nodes;
  using Entry = std::pair<double, std::size_t>;  // (cost, node id)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;

  auto materialize = [&](std::ptrdiff_t id) {
    Bits bits = best.bits;
    for (; id >= 0; id = nodes[static_cast<std::size_t>(id)].parent) {
      const std::size_t v = pos[nodes[static_cast<std::size_t>(id)].last];
      bits[v] ^= 1;
    }
    return Structure::from_bits(std::move(bits), t);
  };

  std::vector<Structure> found{best};
  double kth_cost = 0.0;
  if (D > 0) {
    nodes.push_back({cost[0], 0, -1});
    heap.push({cost[0], 0});
  }
  // Tie expansion is capped so that degenerate inputs (many exactly-zero
  // scores) cannot blow up; beyond the cap ties resolve in generation order.
  const std::size_t cap = k + 4096;
  while (!heap.empty() && found.size() < cap) {
    const auto [c, id] = heap.top();
    if (found.size() >= k && c > kth_cost + tie_eps) break;
    heap.pop();
    const Node node = nodes[id];
    found.push_back(materialize(static_cast<std::ptrdiff_t>(id)));
    if (found.size() == k) kth_cost = c;
    if (node.last + 1 < D) {
      nodes.push_back({c + cost[node.last + 1], node.last + 1, static_cast<std::ptrdiff_t>(id)});
      heap.push({nodes.back().cost, nodes.size() - 1});
      nodes.push_back({c - cost[node.last] + cost[node.last + 1], node.last + 1, node.parent});
      heap.push({nodes.back().cost, nodes.size() - 1});
    }
  }
  std::sort(found.begin(), found.end(), ranks_before);
  if (found.size() > k) found.resize(k);
  return found;
}

}  // namespace sparsemarg
