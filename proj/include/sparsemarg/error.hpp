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

#include <stdexcept>
#include <string>

namespace sparsemarg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite scores, malformed distributions, out-of-range arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Vectors whose lengths do not agree.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// The active set became affinely dependent, or the solver cycled.
class DegenerateSupport : public Error {
 public:
  using Error::Error;
};

/// Losses supplied for a support that does not match the mapping output.
class SupportMismatch : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration requested over a space that is too large.
class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling exhausted its draw budget.
class SamplingBudgetExceeded : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) +
                            " vs " + std::to_string(b));
}

}  // namespace detail
}  // namespace sparsemarg
