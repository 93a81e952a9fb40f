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
#include <limits>
#include <span>
#include <vector>

#include "sparsemarg/error.hpp"

namespace sparsemarg {

/// log(sum(exp(x))) with max-shift. Returns -inf for an empty range or when
/// every term is -inf.
inline double log_sum_exp(std::span<const double> x) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (x.empty()) return kNegInf;
  const double m = *std::max_element(x.begin(), x.end());
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

/// Two-argument form.
inline double log_add_exp(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Quantile with linear interpolation between order statistics
/// (the "type 7" definition). q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidInput("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// ||a - b||_inf / max(||a||_inf, ||b||_inf), with the denominator floored
/// at `floor` so that two (near-)zero vectors compare as equal.
inline double relative_error(std::span<const double> a,
                             std::span<const double> b,
                             double floor = 1e-12) {
  detail::require_same_size(a.size(), b.size(), "relative_error");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double max_abs_diff(std::span<const double> a,
                           std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "max_abs_diff");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace sparsemarg
