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

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sparsemarg/error.hpp"
#include "sparsemarg/marginal.hpp"
#include "sparsemarg/rng.hpp"
#include "sparsemarg/simplex.hpp"
#include "sparsemarg/topk.hpp"

namespace sparsemarg {

enum class EstimatorMethod { dense, sfe, sum_and_sample };

struct EstimatorConfig {
  EstimatorMethod method = EstimatorMethod::dense;
  double baseline_decay = 0.9;
  std::size_t topk_for_sum_and_sample = 1;
  std::uint64_t seed = 0;
};

/// b <- decay * b + (1 - decay) * l after each observed loss.
struct MovingAverageBaseline {
  double value = 0.0;
  double decay = 0.9;

  MovingAverageBaseline updated(double loss) const noexcept {
    return {decay * value + (1.0 - decay) * loss, decay};
  }
};

/// A (possibly stochastic) estimate of the gradient of E_{softmax(s)}[l]
/// w.r.t. the scores and w.r.t. the loss parameters.
struct GradientEstimate {
  std::vector<double> grad_scores;
  std::vector<double> param_grad;
  double loss_estimate = 0.0;
  std::uint64_t calls = 0;
};

constexpr std::size_t kMaxEnumeration = std::size_t{1} << 20;

namespace detail {

inline std::size_t sample_categorical(std::span<const double> p, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

inline void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  if (x.empty()) return;
  if (y.empty()) y.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace detail

/// Exact gradient with every outcome evaluated: the softmax vjp of the loss
/// vector. K calls.
inline GradientEstimate dense_grad(std::span<const double> s, const LossOracle<OutcomeId>& loss) {
  if (s.size() > kMaxEnumeration) throw EnumerationTooLarge("dense_grad: too many outcomes");
  const std::vector<double> p = softmax_ref(s);
  GradientEstimate out;
  std::vector<double> losses(s.size());
  for (std::size_t z = 0; z < s.size(); ++z) {
    LossEval e = loss.eval(z);
    losses[z] = e.value;
    out.loss_estimate += p[z] * e.value;
    detail::axpy(out.param_grad, p[z], e.param_grad);
  }
  out.calls = s.size();
  out.grad_scores = softmax_vjp(p, losses);
  return out;
}

/// (l - b) * grad_s log softmax(s)_sample = (l - b) (e_sample - p).
inline std::vector<double> sfe_grad_given(std::span<const double> p, std::size_t sample,
                                          double loss, double baseline) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = -(loss - baseline) * p[i];
  g[sample] += loss - baseline;
  return g;
}

struct SfeResult {
  GradientEstimate estimate;
  MovingAverageBaseline baseline;
  std::size_t sample = 0;
};

/// Single-sample score-function estimator with a moving-average baseline.
/// The baseline used is the one passed in; the returned one has absorbed the
/// new loss. One call.
inline SfeResult sfe_grad(std::span<const double> s, const LossOracle<OutcomeId>& loss,
                          MovingAverageBaseline baseline, std::uint64_t seed) {
  const std::vector<double> p = softmax_ref(s);
  CounterRng rng(seed);
  SfeResult out;
  out.sample = detail::sample_categorical(p, rng.uniform());
  LossEval e = loss.eval(out.sample);
  out.estimate.grad_scores = sfe_grad_given(p, out.sample, e.value, baseline.value);
  out.estimate.param_grad = std::move(e.param_grad);
  out.estimate.loss_estimate = e.value;
  out.estimate.calls = 1;
  out.baseline = baseline.updated(e.value);
  return out;
}

/// The top-k outcomes of softmax(s) and their total mass.
struct SumAndSampleSplit {
  std::vector<std::size_t> top;
  double complement_mass = 0.0;
};

inline SumAndSampleSplit sum_and_sample_split(std::span<const double> p, std::span<const double> s,
                                              std::size_t k) {
  SumAndSampleSplit out;
  out.top = top_k(s, k).indices();
  std::vector<std::uint8_t> in_top(p.size(), 0);
  for (std::size_t z : out.top) in_top[z] = 1;
  for (std::size_t z = 0; z < p.size(); ++z)
    if (!in_top[z]) out.complement_mass += p[z];
  return out;
}

/// sum_{z in top} l_z grad p_z + m_C * l(sample) * grad log p_sample, where
/// the sample comes from p restricted to the complement and renormalized.
/// With m_C = 0 only the exact part remains.
inline std::vector<double> sum_and_sample_given(std::span<const double> p, const SumAndSampleSplit& split,
                                                std::span<const double> top_losses,
                                                std::size_t sample, double sample_loss) {
  detail::require_same_size(top_losses.size(), split.top.size(), "sum_and_sample_given");
  std::vector<double> g(p.size(), 0.0);
  // grad_s p_z = p_z (e_z - p)
  for (std::size_t j = 0; j < split.top.size(); ++j) {
    const std::size_t z = split.top[j];
    const double w = top_losses[j] * p[z];
    for (std::size_t i = 0; i < p.size(); ++i) g[i] -= w * p[i];
    g[z] += w;
  }
  if (split.complement_mass > 0.0) {
    const double w = split.complement_mass * sample_loss;
    for (std::size_t i = 0; i < p.size(); ++i) g[i] -= w * p[i];
    g[sample] += w;
  }
  return g;
}

/// Rao-Blackwellized estimator: exact over the top-k, one score-function
/// sample from the complement. k + 1 calls (k when the complement has no mass).
inline GradientEstimate sum_and_sample_grad(std::span<const double> s, const LossOracle<OutcomeId>& loss,
                                            std::size_t k, std::uint64_t seed) {
  if (k < 1 || k >= s.size()) throw InvalidInput("sum_and_sample_grad: k must lie in [1, K)");
  const std::vector<double> p = softmax_ref(s);
  const SumAndSampleSplit split = sum_and_sample_split(p, s, k);

  GradientEstimate out;
  std::vector<double> top_losses;
  for (std::size_t z : split.top) {
    LossEval e = loss.eval(z);
    top_losses.push_back(e.value);
    out.loss_estimate += p[z] * e.value;
    detail::axpy(out.param_grad, p[z], e.param_grad);
  }
  out.calls = split.top.size();

  std::size_t sample = split.top.front();
  double sample_loss = 0.0;
  if (split.complement_mass > 0.0) {
    std::vector<double> rest(p.begin(), p.end());
    for (std::size_t z : split.top) rest[z] = 0.0;
    double rest_mass = 0.0;
    for (double v : rest) rest_mass += v;
    CounterRng rng(seed);
    sample = detail::sample_categorical(rest, rng.uniform() * rest_mass);
    LossEval e = loss.eval(sample);
    sample_loss = e.value;
    out.loss_estimate += split.complement_mass * e.value;
    detail::axpy(out.param_grad, split.complement_mass, e.param_grad);
    ++out.calls;
  }
  out.grad_scores = sum_and_sample_given(p, split, top_losses, sample, sample_loss);
  return out;
}

}  // namespace sparsemarg
