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
// Exact expectation of a downstream loss under a sparsemax posterior, and
// the gradient with respect to the scores, evaluating the loss only on the
// support.

#include <cstdio>
#include <vector>

#include "sparsemarg.hpp"

int main() {
  using namespace sparsemarg;

  const std::vector<double> scores{1.2, 0.9, -0.3, 0.8, -2.0, 0.1};
  const std::vector<double> table{0.5, 2.0, 9.0, 1.0, 9.0, 9.0};

  const SparseDistribution p = sparsemax(scores);
  std::printf("support:");
  for (const auto& e : p.support) std::printf(" z=%llu p=%.4f", static_cast<unsigned long long>(e.index), e.prob);
  std::printf("\n");

  LossOracle<OutcomeId> loss([&](const OutcomeId& z) { return LossEval{table[z], {}}; });
  const MarginalReport r = sparse_expectation(p, loss);
  std::printf("E[loss] = %.6f using %llu of %zu loss calls\n", r.expected_loss,
              static_cast<unsigned long long>(r.calls_used), scores.size());

  const std::vector<double> g = grad_scores_through_mapping(scores, p, r.losses);
  std::printf("d E[loss] / d scores:");
  for (double v : g) std::printf(" %+.4f", v);
  std::printf("\n");
}
