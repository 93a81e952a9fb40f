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
#include <concepts>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "sparsemarg/bitvec.hpp"
#include "sparsemarg/cholesky.hpp"
#include "sparsemarg/error.hpp"
#include "sparsemarg/simplex.hpp"

namespace sparsemarg {

/// A polytope given by its vertices a_z in {0,1}^D, accessible only through
/// a maximization oracle.
template <class O>
concept PolytopeOracle = requires(const O& o, std::span<const double> t, const Bits& b) {
  { o.dim() } -> std::convertible_to<std::size_t>;
  { o.map(t) } -> std::same_as<Structure>;
  { o.outcome_id(b) } -> std::convertible_to<OutcomeId>;
  { o.outcome_count() } -> std::convertible_to<OutcomeId>;
};

/// The simplex itself: vertices are the K indicator vectors (A = I).
class IdentityPolytope {
 public:
  explicit IdentityPolytope(std::size_t K) : K_(K) {
    detail::require(K >= 1, "IdentityPolytope: K must be positive");
  }
  std::size_t dim() const noexcept { return K_; }
  OutcomeId outcome_count() const noexcept { return K_; }

  Structure map(std::span<const double> t) const {
    detail::require_same_size(t.size(), K_, "IdentityPolytope::map");
    const auto best = static_cast<std::size_t>(std::max_element(t.begin(), t.end()) - t.begin());
    Bits bits(K_, 0);
    bits[best] = 1;
    return Structure{std::move(bits), t[best]};
  }

  OutcomeId outcome_id(const Bits& b) const {
    return static_cast<OutcomeId>(std::find(b.begin(), b.end(), 1) - b.begin());
  }

 private:
  std::size_t K_;
};

/// All of {0,1}^D: the unit hypercube.
class BitVectorPolytope {
 public:
  explicit BitVectorPolytope(std::size_t D) : D_(D) {
    detail::require(D >= 1 && D <= 62, "BitVectorPolytope: D must lie in [1, 62]");
  }
  std::size_t dim() const noexcept { return D_; }
  OutcomeId outcome_count() const noexcept { return OutcomeId{1} << D_; }
  Structure map(std::span<const double> t) const {
    detail::require_same_size(t.size(), D_, "BitVectorPolytope::map");
    return map_oracle(t);
  }
  OutcomeId outcome_id(const Bits& b) const { return pack_bits(b); }

 private:
  std::size_t D_;
};

/// Bit-vectors with at most B active bits. Ids live in the full 2^D space.
class BudgetPolytope {
 public:
  BudgetPolytope(std::size_t D, std::size_t budget) : D_(D), budget_(budget) {
    detail::require(D >= 1 && D <= 62, "BudgetPolytope: D must lie in [1, 62]");
    detail::require(budget >= 1 && budget <= D, "BudgetPolytope: budget must lie in [1, D]");
  }
  std::size_t dim() const noexcept { return D_; }
  std::size_t budget() const noexcept { return budget_; }
  OutcomeId outcome_count() const noexcept { return OutcomeId{1} << D_; }
  Structure map(std::span<const double> t) const {
    detail::require_same_size(t.size(), D_, "BudgetPolytope::map");
    return budget_map_oracle(t, budget_);
  }
  OutcomeId outcome_id(const Bits& b) const { return pack_bits(b); }

 private:
  std::size_t D_;
  std::size_t budget_;
};

struct SparseMapOptions {
  std::size_t max_iter = 0;  // 0 selects 100 + 10 * D
  double tol = 1e-9;         // on the most negative dual variable
};

/// Working state of the active-set solver. `factor` holds the Cholesky
/// factor of the lifted Gram matrix A'^T A' + 1 1^T over the active columns:
/// the lift keeps it positive definite whenever the active vertices are
/// affinely independent (the zero vertex makes A'^T A' itself singular) and
/// leaves the KKT solution unchanged apart from shifting tau by one.
struct ActiveSetState {
  std::vector<Structure> structures;
  std::vector<double> probs;
  std::vector<double> moments;
  double tau = 0.0;
  detail::GrowingCholesky factor;
  std::size_t iteration = 0;
  bool converged = false;
  double tol = 1e-9;
  double min_dual = -std::numeric_limits<double>::infinity();

  Bits last_added;
  std::size_t last_added_iteration = 0;
  std::size_t cycle_events = 0;

  /// ||A xi - t||^2
  double objective(std::span<const double> t) const {
    double f = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) f += (moments[i] - t[i]) * (moments[i] - t[i]);
    return f;
  }
};

namespace detail {

inline double bits_dot(const Bits& a, const Bits& b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i] & b[i]);
  return s;
}

inline std::vector<double> moments_of(const std::vector<Structure>& zs,
                                      const std::vector<double>& probs, std::size_t D) {
  std::vector<double> mu(D, 0.0);
  for (std::size_t j = 0; j < zs.size(); ++j)
    for (std::size_t i = 0; i < D; ++i)
      if (zs[j].bits[i]) mu[i] += probs[j];
  return mu;
}

inline void refactor(ActiveSetState& st) {
  const std::size_t n = st.structures.size();
  std::vector<double> gram(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      gram[a * n + b] = bits_dot(st.structures[a].bits, st.structures[b].bits) + 1.0;
  st.factor.factor(gram, n);
}

inline void push_structure(ActiveSetState& st, Structure z) {
  std::vector<double> col;
  col.reserve(st.structures.size() + 1);
  for (const auto& y : st.structures) col.push_back(bits_dot(y.bits, z.bits) + 1.0);
  col.push_back(static_cast<double>(z.active_count()) + 1.0);
  st.factor.append(col);
  st.structures.push_back(std::move(z));
  st.probs.push_back(0.0);
}

constexpr double kRefactorCondition = 1e12;
constexpr std::size_t kMaxCycleEvents = 3;

}  // namespace detail

/// Starts from the MAP vertex of t.
template <PolytopeOracle Oracle>
ActiveSetState init_active_set(const Oracle& oracle, std::span<const double> t,
                               double tol = 1e-9) {
  check_finite(t, "variable scores");
  detail::require_same_size(t.size(), oracle.dim(), "sparsemap scores");
  detail::require(tol > 0.0, "sparsemap: tol must be positive");
  ActiveSetState st;
  st.tol = tol;
  Structure z = oracle.map(t);
  z.score = structure_score(z.bits, t);
  st.last_added = z.bits;
  detail::push_structure(st, std::move(z));
  st.probs[0] = 1.0;
  st.moments = detail::moments_of(st.structures, st.probs, t.size());
  return st;
}

/// One iteration of the active-set method: solve the equality-constrained QP
/// on the current support, move towards its solution as far as feasibility
/// allows, then either drop the blocking structure or query the oracle for
/// the most violated dual constraint and add it.
template <PolytopeOracle Oracle>
ActiveSetState active_set_step(ActiveSetState st, const Oracle& oracle,
                               std::span<const double> t) {
  if (st.converged) return st;
  ++st.iteration;
  const std::size_t n = st.structures.size();
  const std::size_t D = t.size();

  std::vector<double> u(n), v(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) u[i] = structure_score(st.structures[i].bits, t);
  st.factor.solve(u);
  st.factor.solve(v);
  const double su = std::accumulate(u.begin(), u.end(), 0.0);
  const double sv = std::accumulate(v.begin(), v.end(), 0.0);
  const double shifted_tau = (su - 1.0) / sv;
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) target[i] = u[i] - shifted_tau * v[i];
  st.tau = shifted_tau + 1.0;

  double gamma = 1.0;
  std::size_t blocking = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (st.probs[i] > target[i]) {
      const double ratio = st.probs[i] / (st.probs[i] - target[i]);
      if (ratio < gamma) {
        gamma = ratio;
        blocking = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    st.probs[i] = std::max(0.0, (1.0 - gamma) * st.probs[i] + gamma * target[i]);

  if (blocking < n) {
    const bool undoes_add = st.structures[blocking].bits == st.last_added &&
                            st.iteration - st.last_added_iteration <= 2;
    st.structures.erase(st.structures.begin() + static_cast<std::ptrdiff_t>(blocking));
    st.probs.erase(st.probs.begin() + static_cast<std::ptrdiff_t>(blocking));
    st.factor.remove(blocking);
    if (undoes_add) {
      if (++st.cycle_events > detail::kMaxCycleEvents)
        throw DegenerateSupport("sparsemap: active set keeps cycling on a degenerate vertex");
      detail::refactor(st);
      st.tol *= 10.0;
    }
    const double total = std::accumulate(st.probs.begin(), st.probs.end(), 0.0);
    for (double& p : st.probs) p /= total;
    st.moments = detail::moments_of(st.structures, st.probs, D);
    return st;
  }

  st.moments = detail::moments_of(st.structures, st.probs, D);
  std::vector<double> residual(D);
  for (std::size_t i = 0; i < D; ++i) residual[i] = t[i] - st.moments[i];
  Structure z = oracle.map(residual);
  st.min_dual = st.tau - structure_score(z.bits, residual);
  if (st.min_dual >= -st.tol) {
    st.converged = true;
    return st;
  }
  const bool present = std::any_of(st.structures.begin(), st.structures.end(),
                                   [&](const Structure& y) { return y.bits == z.bits; });
  if (present) {
    // The oracle returned an active column: the factor has lost accuracy.
    if (++st.cycle_events > detail::kMaxCycleEvents)
      throw DegenerateSupport("sparsemap: dual violation on an active structure persists");
    detail::refactor(st);
    st.tol *= 10.0;
    return st;
  }
  z.score = structure_score(z.bits, t);
  st.last_added = z.bits;
  st.last_added_iteration = st.iteration;
  detail::push_structure(st, std::move(z));
  if (st.factor.condition_estimate() > detail::kRefactorCondition) detail::refactor(st);
  return st;
}

/// Solution of min_{xi in simplex} ||A xi - t||^2 together with the data the
/// backward pass needs. Structures are sorted by outcome id and aligned with
/// `probs`; only strictly positive weights are kept.
struct SparseMapResult {
  std::vector<Structure> structures;
  std::vector<double> probs;
  SparseDistribution distribution;
  std::vector<double> moments;
  double tau = 0.0;
  double min_dual = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

template <PolytopeOracle Oracle>
SparseMapResult sparsemap(const Oracle& oracle, std::span<const double> t,
                          SparseMapOptions options = {}) {
  const std::size_t max_iter = options.max_iter ? options.max_iter : 100 + 10 * t.size();
  ActiveSetState st = init_active_set(oracle, t, options.tol);
  while (!st.converged && st.iteration < max_iter)
    st = active_set_step(std::move(st), oracle, t);

  std::vector<std::size_t> keep;
  double total = 0.0;
  for (std::size_t i = 0; i < st.structures.size(); ++i)
    if (st.probs[i] > 0.0) {
      keep.push_back(i);
      total += st.probs[i];
    }
  std::vector<OutcomeId> ids(st.structures.size());
  for (std::size_t i : keep) ids[i] = oracle.outcome_id(st.structures[i].bits);
  std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  SparseMapResult out;
  out.distribution.dim = oracle.outcome_count();
  out.distribution.threshold = st.tau;
  for (std::size_t i : keep) {
    const double p = st.probs[i] / total;
    out.structures.push_back(st.structures[i]);
    out.probs.push_back(p);
    out.distribution.support.push_back({ids[i], p});
  }
  out.moments = detail::moments_of(out.structures, out.probs, t.size());
  out.tau = st.tau;
  out.min_dual = st.min_dual;
  out.converged = st.converged;
  out.iterations = st.iteration;
  return out;
}

namespace detail {

/// (S - s s^T / (1^T s)) g with S = (A'^T A')^{-1}, s = S 1: the top-left
/// block of the inverse KKT matrix. Computed through the lifted Gram matrix,
/// which has the same top-left block.
inline std::vector<double> projected_inverse_apply(const std::vector<Structure>& zs,
                                                   std::span<const double> g) {
  ActiveSetState tmp;
  tmp.structures = zs;
  refactor(tmp);
  std::vector<double> w(g.begin(), g.end()), s(zs.size(), 1.0);
  tmp.factor.solve(w);
  tmp.factor.solve(s);
  const double s_sum = std::accumulate(s.begin(), s.end(), 0.0);
  double sg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) sg += s[i] * g[i];
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= s[i] * sg / s_sum;
  return w;
}

}  // namespace detail

/// Gradient w.r.t. t of sum_z xi_z * upstream_z, upstream aligned with
/// result.structures. Implicit differentiation of the KKT system with the
/// support held fixed.
inline std::vector<double> sparsemap_vjp_probs(const SparseMapResult& result,
                                               std::span<const double> upstream_on_support) {
  if (!result.converged) throw InvalidInput("sparsemap backward requires a converged result");
  detail::require_same_size(upstream_on_support.size(), result.structures.size(),
                            "sparsemap_vjp_probs");
  const std::size_t D = result.moments.size();
  const std::vector<double> w = detail::projected_inverse_apply(result.structures, upstream_on_support);
  std::vector<double> out(D, 0.0);
  for (std::size_t z = 0; z < w.size(); ++z)
    for (std::size_t i = 0; i < D; ++i)
      if (result.structures[z].bits[i]) out[i] += w[z];
  return out;
}

/// Gradient w.r.t. t of <upstream, mu(t)> for the moments mu = A xi. The
/// implied D x D Jacobian A'(S - ss^T/s)A'^T is symmetric.
inline std::vector<double> sparsemap_vjp(const SparseMapResult& result,
                                         std::span<const double> upstream_on_moments) {
  detail::require_same_size(upstream_on_moments.size(), result.moments.size(), "sparsemap_vjp");
  std::vector<double> g(result.structures.size(), 0.0);
  for (std::size_t z = 0; z < g.size(); ++z)
    g[z] = structure_score(result.structures[z].bits, upstream_on_moments);
  return sparsemap_vjp_probs(result, g);
}

}  // namespace sparsemarg
