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

#ifndef HSD_LAYERED_STATE_HPP_
#define HSD_LAYERED_STATE_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "hsd/types.hpp"

namespace hsd {

class ModelBackend;

struct CommitMark {
  Index position = -1;  // last position committed by the final layer, -1 if none
  Index buffer_start = 0;
};

/// K/V rows (and hidden rows, for buffered exit layers) for one layer of a pass.
struct LayerEntries {
  Matrix keys;
  Matrix values;
  Matrix hidden;
};

/// Per-layer KV cache plus hidden-state buffers at the exit layers.
///
/// Each layer owns a growable array of rows with an explicit fill counter,
/// so pruning is a truncation. Draft layers may run ahead of deeper layers;
/// fill counters are therefore non-increasing in depth. A position belongs
/// to the token occupying it: replacing that token requires pruning every
/// layer back below the position first.
///
/// Structural-only backends use width 0: the bookkeeping (fill counters,
/// occupants, compute counts) is identical, but no numbers are stored.
class LayeredState {
 public:
  LayeredState(int n_layers, int width, Index capacity, std::vector<int> exit_layers);

  int num_layers() const { return n_layers_; }
  int width() const { return width_; }
  Index capacity() const { return capacity_; }
  const std::vector<int>& exit_layers() const { return exit_layers_; }
  bool buffers_hidden(int layer) const;

  Index filled_len(int layer) const;
  Index committed_len() const { return committed_len_; }
  /// Filled positions at `layer` beyond the committed prefix.
  Index tentative_extent(int layer) const;
  CommitMark commit_mark() const;
  /// Marks the first `len` sequence positions as accepted by the final layer.
  void commit(Index len);

  /// Tokens occupying computed positions (length = max fill over layers).
  std::span<const TokenId> occupants() const { return occupants_; }

  /// Throws unless `layers` can be computed for positions
  /// [first, first + tokens.size()) on top of this state.
  void check_pass(LayerRange layers, Index first, std::span<const TokenId> tokens) const;

  /// Appends one pass worth of entries (one LayerEntries per layer in range).
  void extend(LayerRange layers, Index first, std::span<const TokenId> tokens,
              std::span<const LayerEntries> entries);

  /// Appends rows for a single layer. Layers of a pass must be appended in
  /// increasing order. `hidden` is required iff the layer is buffered.
  void append_layer(int layer, Index first, std::span<const TokenId> tokens,
                    const Matrix& keys, const Matrix& values, const Matrix* hidden);

  /// Removes entries at positions >= keep_len for every layer in range.
  void prune_to(LayerRange layers, Index keep_len);
  /// Prunes every layer filled past keep_len; layers at or below it are untouched.
  void rollback(Index keep_len);

  /// Pruning only lowers fill counters, so rows past the fill point keep
  /// their last contents. Re-admits the leading positions of a pending pass
  /// over `layers` whose rows were computed for exactly the same prefix,
  /// without recomputing them. Returns the number of positions restored.
  Index restore(LayerRange layers, Index first, std::span<const TokenId> tokens);

  Eigen::Block<const Matrix> keys(int layer) const;
  Eigen::Block<const Matrix> values(int layer) const;
  Eigen::Block<const Matrix> hidden(int layer) const;
  /// Mutable row access, for fault-injection tests.
  Matrix::RowXpr mutable_key(int layer, Index position);

  /// Times the computation (layer, prefix ending at position) has been
  /// performed. Recomputing a position after a prune with the same prefix
  /// counts again; a different prefix restarts the count.
  std::uint32_t compute_count(int layer, Index position) const;

  /// Equal fill counters, commit mark, occupants and stored rows.
  bool same_contents(const LayeredState& other) const;

 private:
  struct ComputeCell {
    std::uint64_t prefix_key = 0;
    std::uint32_t count = 0;
  };
  struct LayerStore {
    Matrix keys;
    Matrix values;
    Matrix hidden;
    Index filled = 0;
    bool buffered = false;
    std::vector<ComputeCell> computes;
  };

  void check_layer(int layer) const;
  void reserve_rows(LayerStore& store, Index rows) const;
  void occupy(Index first, std::span<const TokenId> tokens);
  void check_occupants(int layer, Index first, std::span<const TokenId> tokens) const;
  void shrink_occupants();

  int n_layers_;
  int width_;
  Index capacity_;
  std::vector<int> exit_layers_;
  std::vector<LayerStore> layers_;
  std::vector<TokenId> occupants_;
  std::vector<std::uint64_t> prefix_keys_;
  Index committed_len_ = 0;
};

struct LayerDiscrepancy {
  int layer = 0;
  Index positions = 0;
  Real max_key_diff = 0;
  Real max_value_diff = 0;
  Real max_hidden_diff = 0;
  Index worst_position = -1;  // -1 when all differences are zero

  Real max_diff() const;
};

struct ConsistencyReport {
  std::vector<LayerDiscrepancy> layers;  // only layers with filled entries
  Index occupant_mismatches = 0;

  bool clean() const;
  Real max_diff() const;
};

/// Recomputes every stored K/V and buffered hidden row from `tokens` with a
/// single monolithic pass on a fresh state and reports the per-layer maximum
/// absolute difference.
ConsistencyReport consistency_check(const LayeredState& state, const ModelBackend& backend,
                                    std::span<const TokenId> tokens);

}  // namespace hsd

#endif  // HSD_LAYERED_STATE_HPP_
