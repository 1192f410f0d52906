// Copyright 2026 The hsd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HSD_TYPES_HPP_
#define HSD_TYPES_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace hsd {

using Real = double;
using TokenId = std::int32_t;
using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<Real>;
using Vector = VectorX<Real>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model, decode or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Sequence would exceed the model's positional capacity.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// KV / hidden-state bookkeeping does not line up with a requested pass.
class AlignmentError : public Error {
 public:
  AlignmentError(int layer, Index position, const std::string& what)
      : Error("state alignment error at (layer " + std::to_string(layer) +
              ", position " + std::to_string(position) + "): " + what),
        layer_(layer),
        position_(position) {}

  int layer() const { return layer_; }
  Index position() const { return position_; }

 private:
  int layer_;
  Index position_;
};

/// Attempt to undo entries that the final layer already committed.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Closed layer interval [start, end], 1-based.
struct LayerRange {
  int start = 1;
  int end = 1;

  int size() const { return end - start + 1; }
  bool contains(int layer) const { return layer >= start && layer <= end; }
  bool valid_for(int n_layers) const {
    return start >= 1 && start <= end && end <= n_layers;
  }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct HiddenState {
  Index position = 0;
  int layer = 0;
  Vector values;
};

/// Next-token scores produced at one exit layer for one position.
///
/// Dense distributions carry `logits` (vocab_size entries). One-hot
/// distributions, which only define an argmax, leave `logits` empty and
/// set `one_hot`.
struct TokenDistribution {
  Vector logits;
  Index position = 0;
  int source_layer = 0;
  std::optional<TokenId> one_hot;
};

/// Highest-scoring token; ties go to the lowest id.
template <typename Derived>
TokenId argmax_token(const Eigen::DenseBase<Derived>& logits) {
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

inline TokenId greedy_token(const TokenDistribution& dist) {
  if (dist.one_hot) return *dist.one_hot;
  return argmax_token(dist.logits);
}

}  // namespace hsd

#endif  // HSD_TYPES_HPP_
