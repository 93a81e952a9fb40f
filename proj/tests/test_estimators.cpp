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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sparsemarg/estimators.hpp"
#include "sparsemarg/testing/oracles.hpp"
#include "test_util.hpp"

namespace sparsemarg {
namespace {

using test::expect_all_near;

LossOracle<OutcomeId> table_loss(const std::vector<double>& table) {
  return LossOracle<OutcomeId>([&table](const OutcomeId& z) { return LossEval{table[z], {table[z], 1.0}}; });
}

double expected(const std::vector<double>& p, const std::vector<double>& l) {
  double v = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) v += p[i] * l[i];
  return v;
}

// Total variance (trace of the covariance) of a discrete gradient estimator.
double total_variance(const std::vector<double>& weights, const std::vector<std::vector<double>>& grads) {
  std::vector<double> mean(grads.front().size(), 0.0);
  for (std::size_t j = 0; j < grads.size(); ++j)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += weights[j] * grads[j][i];
  double v = 0.0;
  for (std::size_t j = 0; j < grads.size(); ++j)
    for (std::size_t i = 0; i < mean.size(); ++i) v += weights[j] * (grads[j][i] - mean[i]) * (grads[j][i] - mean[i]);
  return v;
}

TEST(DenseGrad, TwoOutcomes) {
  const std::vector<double> table{0.0, 1.0};
  const auto loss = table_loss(table);
  const auto g = dense_grad(std::vector<double>{0.0, 0.0}, loss);
  expect_all_near(g.grad_scores, std::vector<double>{-0.25, 0.25}, 1e-15);
  EXPECT_EQ(g.loss_estimate, 0.5);
  EXPECT_EQ(g.calls, 2u);
  EXPECT_EQ(loss.calls(), 2u);
  expect_all_near(g.param_grad, std::vector<double>{0.5, 1.0}, 1e-15);
}

TEST(DenseGradProperty, MatchesFiniteDifferences) {
  CounterRng rng(601);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng.below(15);
    const auto s = test::normals(rng, K, 2.0);
    const auto table = test::normals(rng, K);
    const auto g = dense_grad(s, table_loss(table));
    const auto fd = testing::fd_gradient(
        [&](const std::vector<double>& x) { return expected(testing::plain_softmax(x), table); }, s, 1e-6);
    EXPECT_LE(relative_error(g.grad_scores, fd, 1e-8), 1e-6);
    expect_all_near(g.grad_scores, testing::exact_softmax_grad(s, table), 1e-13);
  }
}

TEST(Sfe, EnumeratedExpectationEqualsDense) {
  CounterRng rng(602);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng.below(15);
    const auto s = test::normals(rng, K, 2.0);
    const auto table = test::normals(rng, K);
    const double b = rng.normal();
    const auto p = testing::plain_softmax(s);
    std::vector<double> mean(K, 0.0);
    for (std::size_t z = 0; z < K; ++z) {
      const auto g = sfe_grad_given(p, z, table[z], b);
      for (std::size_t i = 0; i < K; ++i) mean[i] += p[z] * g[i];
    }
    expect_all_near(mean, testing::exact_softmax_grad(s, table), 1e-10);
  }
}

TEST(Sfe, LossEqualToBaselineGivesZero) {
  const std::vector<double> table(4, 0.7);
  const auto r = sfe_grad(std::vector<double>{0.1, -0.3, 2.0, 0.0}, table_loss(table),
                          MovingAverageBaseline{0.7, 0.9}, 5);
  expect_all_near(r.estimate.grad_scores, std::vector<double>(4, 0.0), 1e-15);
  EXPECT_EQ(r.estimate.calls, 1u);
}

TEST(Sfe, SingleOutcomeGivesZero) {
  const std::vector<double> table{3.0};
  const auto r = sfe_grad(std::vector<double>{0.4}, table_loss(table), MovingAverageBaseline{}, 1);
  expect_all_near(r.estimate.grad_scores, std::vector<double>{0.0}, 1e-15);
  EXPECT_EQ(r.sample, 0u);
}

TEST(Sfe, BaselineUpdate) {
  const std::vector<double> table{2.0, 2.0};
  const auto r = sfe_grad(std::vector<double>{0.0, 0.0}, table_loss(table), MovingAverageBaseline{1.0, 0.9}, 3);
  EXPECT_NEAR(r.baseline.value, 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
  EXPECT_EQ(r.baseline.decay, 0.9);
}

TEST(Sfe, SampleFrequenciesFollowSoftmax) {
  const std::vector<double> s{1.0, 0.0, -1.0};
  const std::vector<double> table{0.0, 1.0, 2.0};
  const auto p = testing::plain_softmax(s);
  const auto loss = table_loss(table);
  std::vector<double> counts(3, 0.0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) counts[sfe_grad(s, loss, {}, static_cast<std::uint64_t>(i)).sample] += 1.0;
  for (std::size_t z = 0; z < 3; ++z) {
    const double se = std::sqrt(p[z] * (1.0 - p[z]) / n);
    EXPECT_NEAR(counts[z] / n, p[z], 4.0 * se);
  }
}

TEST(SumAndSample, UnbiasedForEveryK) {
  CounterRng rng(603);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 3 + rng.below(8);
    const auto s = test::normals(rng, K, 1.5);
    const auto table = test::normals(rng, K);
    const auto p = testing::plain_softmax(s);
    const auto exact = testing::exact_softmax_grad(s, table);
    for (std::size_t k = 1; k < K; ++k) {
      const auto split = sum_and_sample_split(p, s, k);
      std::vector<double> top_losses;
      for (std::size_t z : split.top) top_losses.push_back(table[z]);
      std::vector<double> mean(K, 0.0);
      for (std::size_t z = 0; z < K; ++z) {
        if (std::find(split.top.begin(), split.top.end(), z) != split.top.end()) continue;
        const double w = p[z] / split.complement_mass;
        const auto g = sum_and_sample_given(p, split, top_losses, z, table[z]);
        for (std::size_t i = 0; i < K; ++i) mean[i] += w * g[i];
      }
      expect_all_near(mean, exact, 1e-10);
    }
  }
}

TEST(SumAndSample, NoMoreVarianceThanPlainSfe) {
  CounterRng rng(604);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 3 + rng.below(8);
    const auto s = test::normals(rng, K, 1.5);
    const auto table = test::normals(rng, K);
    const auto p = testing::plain_softmax(s);
    std::vector<std::vector<double>> sfe;
    for (std::size_t z = 0; z < K; ++z) sfe.push_back(sfe_grad_given(p, z, table[z], 0.0));
    const double v_sfe = total_variance(p, sfe);

    const auto split = sum_and_sample_split(p, s, 1);
    std::vector<double> top_losses{table[split.top[0]]};
    std::vector<double> w;
    std::vector<std::vector<double>> ss;
    for (std::size_t z = 0; z < K; ++z) {
      if (z == split.top[0]) continue;
      w.push_back(p[z] / split.complement_mass);
      ss.push_back(sum_and_sample_given(p, split, top_losses, z, table[z]));
    }
    EXPECT_LE(total_variance(w, ss), v_sfe + 1e-12);
  }
}

TEST(SumAndSample, CallCounts) {
  const std::vector<double> table{0.1, 0.2, 0.3, 0.4, 0.5};
  const std::vector<double> s{0.5, -1.0, 2.0, 0.0, 0.3};
  for (std::size_t k = 1; k < 5; ++k) {
    const auto loss = table_loss(table);
    const auto g = sum_and_sample_grad(s, loss, k, 11);
    EXPECT_EQ(g.calls, k + 1);
    EXPECT_EQ(loss.calls(), k + 1);
  }
  EXPECT_EQ(dense_grad(s, table_loss(table)).calls, 5u);
}

TEST(SumAndSample, KOutOfRange) {
  const std::vector<double> table{0.0, 1.0, 2.0};
  const std::vector<double> s{0.0, 1.0, 2.0};
  EXPECT_THROW(sum_and_sample_grad(s, table_loss(table), 0, 1), InvalidInput);
  EXPECT_THROW(sum_and_sample_grad(s, table_loss(table), 3, 1), InvalidInput);
}

TEST(SumAndSample, SampleStaysInComplement) {
  const std::vector<double> s{3.0, 2.0, 1.0, 0.0, -1.0};
  const std::vector<double> table{0.0, 0.0, 1.0, 2.0, 3.0};
  const auto p = testing::plain_softmax(s);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto g = sum_and_sample_grad(s, table_loss(table), 2, seed);
    // The exact top-2 part contributes nothing here since l = 0 on the top.
    const double m = p[2] + p[3] + p[4];
    EXPECT_GT(g.loss_estimate, 0.0);
    EXPECT_LE(g.loss_estimate, 3.0 * m + 1e-15);
  }
}

}  // namespace
}  // namespace sparsemarg
