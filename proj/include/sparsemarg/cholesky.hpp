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
#include <span>
#include <vector>

#include "sparsemarg/error.hpp"

namespace sparsemarg::detail {

/// Lower Cholesky factor of a small SPD matrix that grows and shrinks by one
/// row/column at a time. Appending is a bordered forward solve; removing a
/// row is restored to triangular form with Givens rotations. Dense n x n
/// storage: n stays below D + 2 in the active-set solver.
class GrowingCholesky {
 public:
  std::size_t size() const noexcept { return n_; }

  void clear() noexcept {
    n_ = 0;
    L_.clear();
  }

  /// Appends a row/column. `col` holds the new column of the matrix: its
  /// inner products with the existing columns followed by the diagonal.
  void append(std::span<const double> col) {
    require_same_size(col.size(), n_ + 1, "GrowingCholesky::append");
    std::vector<double> row(col.begin(), col.end() - 1);
    forward_solve(row);
    double d = col[n_];
    for (double v : row) d -= v * v;
    if (!(d > kPivotFloor * std::max(1.0, std::abs(col[n_]))))
      throw DegenerateSupport("active set is affinely dependent (non-positive pivot)");
    resize(n_ + 1);
    for (std::size_t j = 0; j + 1 < n_; ++j) at(n_ - 1, j) = row[j];
    at(n_ - 1, n_ - 1) = std::sqrt(d);
  }

  /// Deletes row/column j.
  void remove(std::size_t j) {
    require(j < n_, "GrowingCholesky::remove: index out of range");
    const std::size_t n = n_;
    std::vector<double> M((n - 1) * n, 0.0);  // L without row j, (n-1) x n
    for (std::size_t r = 0, rr = 0; r < n; ++r) {
      if (r == j) continue;
      for (std::size_t c = 0; c <= r; ++c) M[rr * n + c] = at(r, c);
      ++rr;
    }
    // Rows >= j now carry one entry above the diagonal; rotate columns
    // (c, c+1) to annihilate it. Right rotations leave M M^T unchanged and
    // the new diagonal entry is hypot(a, b) > 0.
    for (std::size_t c = j; c + 1 < n; ++c) {
      const double a = M[c * n + c], b = M[c * n + c + 1];
      const double h = std::hypot(a, b);
      if (h == 0.0) continue;
      const double cs = a / h, sn = b / h;
      for (std::size_t r = c; r + 1 < n; ++r) {
        const double x = M[r * n + c], y = M[r * n + c + 1];
        M[r * n + c] = cs * x + sn * y;
        M[r * n + c + 1] = -sn * x + cs * y;
      }
    }
    resize(n - 1);
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c <= r; ++c) at(r, c) = M[r * n + c];
    for (std::size_t r = 0; r < n_; ++r)
      if (!(at(r, r) > 0.0))
        throw DegenerateSupport("active set is affinely dependent after removal");
  }

  /// Refactors from scratch; `gram` is row-major n x n.
  void factor(std::span<const double> gram, std::size_t n) {
    require_same_size(gram.size(), n * n, "GrowingCholesky::factor");
    clear();
    std::vector<double> col;
    for (std::size_t i = 0; i < n; ++i) {
      col.assign(gram.begin() + static_cast<std::ptrdiff_t>(i * n),
                 gram.begin() + static_cast<std::ptrdiff_t>(i * n + i + 1));
      append(col);
    }
  }

  /// Solves L L^T x = b in place.
  void solve(std::vector<double>& b) const {
    require_same_size(b.size(), n_, "GrowingCholesky::solve");
    forward_solve(b);
    for (std::size_t i = n_; i-- > 0;) {
      double v = b[i];
      for (std::size_t j = i + 1; j < n_; ++j) v -= at(j, i) * b[j];
      b[i] = v / at(i, i);
    }
  }

  /// (max diag / min diag)^2, a cheap lower bound on the 2-norm condition
  /// number of L L^T.
  double condition_estimate() const noexcept {
    if (n_ == 0) return 1.0;
    double lo = at(0, 0), hi = at(0, 0);
    for (std::size_t i = 1; i < n_; ++i) {
      lo = std::min(lo, at(i, i));
      hi = std::max(hi, at(i, i));
    }
    const double r = hi / lo;
    return r * r;
  }

 private:
  static constexpr double kPivotFloor = 1e-14;

  double& at(std::size_t r, std::size_t c) noexcept { return L_[r * n_ + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return L_[r * n_ + c]; }

  void resize(std::size_t n) {
    std::vector<double> next(n * n, 0.0);
    const std::size_t keep = std::min(n, n_);
    for (std::size_t r = 0; r < keep; ++r)
      for (std::size_t c = 0; c <= r; ++c) next[r * n + c] = L_[r * n_ + c];
    L_ = std::move(next);
    n_ = n;
  }

  void forward_solve(std::vector<double>& b) const {
    for (std::size_t i = 0; i < b.size(); ++i) {
      double v = b[i];
      for (std::size_t j = 0; j < i; ++j) v -= at(i, j) * b[j];
      b[i] = v / at(i, i);
    }
  }

  std::size_t n_ = 0;
  std::vector<double> L_;
};

}  // namespace sparsemarg::detail
