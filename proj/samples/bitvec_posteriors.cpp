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
// Posteriors over bit vectors: SparseMAP on the cube and on the budget
// polytope, and top-k sparsemax over the 2^D structures with its
// optimality certificate.

#include <cstdio>
#include <vector>

#include "sparsemarg.hpp"

namespace {

void print_structures(const char* name, const std::vector<sparsemarg::Structure>& zs,
                      const std::vector<double>& probs) {
  std::printf("%s (%zu structures)\n", name, zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) {
    std::printf("  ");
    for (auto b : zs[i].bits) std::printf("%d", static_cast<int>(b));
    std::printf("  %.4f\n", probs[i]);
  }
}

}  // namespace

int main() {
  using namespace sparsemarg;
  const std::vector<double> t{0.9, 0.4, -0.2, 0.6, 0.05};

  const SparseMapResult cube = sparsemap(BitVectorPolytope(t.size()), t);
  print_structures("sparsemap, all bit vectors", cube.structures, cube.probs);
  std::printf("  moments:");
  for (double m : cube.moments) std::printf(" %.3f", m);
  std::printf("  iterations %zu\n", cube.iterations);

  const SparseMapResult budget = sparsemap(BudgetPolytope(t.size(), 2), t);
  print_structures("sparsemap, at most 2 active bits", budget.structures, budget.probs);

  const StructuredTopK topk = structured_topk_sparsemax(t, 8);
  print_structures("top-8 sparsemax", topk.structures, topk.probs);
  std::printf("  certificate: %s\n", topk.certificate ? "exact" : "not certified");
}
