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

#include "sparsemarg/bitvec.hpp"
#include "sparsemarg/error.hpp"
#include "sparsemarg/estimators.hpp"
#include "sparsemarg/marginal.hpp"
#include "sparsemarg/numeric.hpp"
#include "sparsemarg/rng.hpp"
#include "sparsemarg/simplex.hpp"
#include "sparsemarg/sparsemap.hpp"
#include "sparsemarg/structured_topk.hpp"
#include "sparsemarg/topk.hpp"
#include "sparsemarg/toy_models.hpp"
#include "sparsemarg/version.hpp"
