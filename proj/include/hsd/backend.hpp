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

#ifndef HSD_BACKEND_HPP_
#define HSD_BACKEND_HPP_

#include <span>
#include <vector>

#include "hsd/layered_state.hpp"
#include "hsd/types.hpp"

namespace hsd {

/// Anything that yields next-token distributions at any exit layer while
/// keeping its per-layer state in a LayeredState.
///
/// Implementations are immutable after construction and may be shared by
/// concurrent decode sessions, each with its own state.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual int num_layers() const = 0;
  virtual int vocab_size() const = 0;
  virtual Index max_seq_len() const = 0;
  /// Row width of stored K/V/hidden entries; 0 for structural-only backends.
  virtual int state_width() const = 0;

  /// Computes `layers` for positions [first, first + count) of `tokens`,
  /// appending to `state`, and returns the exit distribution at layers.end
  /// for each of those positions.
  virtual std::vector<TokenDistribution> run_layers(LayerRange layers,
                                                    std::span<const TokenId> tokens,
                                                    Index first, Index count,
                                                    LayeredState& state) const = 0;

  /// Exit distribution for an already computed position at a buffered exit layer.
  virtual TokenDistribution buffered_distribution(int layer, std::span<const TokenId> tokens,
                                                  Index position,
                                                  const LayeredState& state) const = 0;

  LayeredState make_state(std::vector<int> exit_layers) const {
    return LayeredState(num_layers(), state_width(), max_seq_len(), std::move(exit_layers));
  }
};

}  // namespace hsd

#endif  // HSD_BACKEND_HPP_
