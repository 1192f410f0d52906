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

#include "hsd/layered_state.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hsd/backend.hpp"
#include "hsd/hash.hpp"

namespace hsd {

namespace {

constexpr std::uint64_t kPrefixSeed = 0x7072656669784b59ULL;

std::uint64_t extend_prefix_key(std::uint64_t prev, TokenId token) {
  return mix64(prev ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(token)) + 1));
}

}  // namespace

LayeredState::LayeredState(int n_layers, int width, Index capacity,
                           std::vector<int> exit_layers)
    : n_layers_(n_layers), width_(width), capacity_(capacity),
      exit_layers_(std::move(exit_layers)) {
  if (n_layers < 1) throw ConfigError("LayeredState: n_layers must be >= 1");
  if (width < 0) throw ConfigError("LayeredState: width must be >= 0");
  if (capacity < 1) throw ConfigError("LayeredState: capacity must be >= 1");
  std::sort(exit_layers_.begin(), exit_layers_.end());
  exit_layers_.erase(std::unique(exit_layers_.begin(), exit_layers_.end()), exit_layers_.end());
  layers_.resize(static_cast<std::size_t>(n_layers));
  for (int layer : exit_layers_) {
    if (layer < 1 || layer > n_layers) {
      throw ConfigError("LayeredState: exit layer " + std::to_string(layer) + " out of range");
    }
    layers_[static_cast<std::size_t>(layer - 1)].buffered = true;
  }
}

void LayeredState::check_layer(int layer) const {
  if (layer < 1 || layer > n_layers_) {
    throw std::out_of_range("layer " + std::to_string(layer) + " outside [1, " +
                            std::to_string(n_layers_) + "]");
  }
}

bool LayeredState::buffers_hidden(int layer) const {
  check_layer(layer);
  return layers_[static_cast<std::size_t>(layer - 1)].buffered;
}

Index LayeredState::filled_len(int layer) const {
  check_layer(layer);
  return layers_[static_cast<std::size_t>(layer - 1)].filled;
}

Index LayeredState::tentative_extent(int layer) const {
  const Index filled = filled_len(layer);
  return std::max<Index>(0, filled - committed_len_);
}

CommitMark LayeredState::commit_mark() const {
  return CommitMark{committed_len_ - 1, committed_len_};
}

void LayeredState::commit(Index len) {
  if (len < committed_len_) {
    throw ProtocolError("commit: cannot move the commit mark back from " +
                        std::to_string(committed_len_) + " to " + std::to_string(len));
  }
  committed_len_ = len;
}

void LayeredState::reserve_rows(LayerStore& store, Index rows) const {
  if (store.keys.rows() >= rows) return;
  Index grown = std::max<Index>(16, store.keys.rows());
  while (grown < rows) grown *= 2;
  grown = std::min(grown, capacity_);
  store.keys.conservativeResize(grown, width_);
  store.values.conservativeResize(grown, width_);
  if (store.buffered) store.hidden.conservativeResize(grown, width_);
  store.computes.resize(static_cast<std::size_t>(grown));
}

void LayeredState::check_occupants(int layer, Index first,
                                   std::span<const TokenId> tokens) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto p = static_cast<std::size_t>(first) + i;
    if (p >= occupants_.size()) break;
    if (occupants_[p] != tokens[i]) {
      throw AlignmentError(layer, static_cast<Index>(p),
                           "position is occupied by token " + std::to_string(occupants_[p]) +
                               ", not " + std::to_string(tokens[i]) + "; prune it first");
    }
  }
}

void LayeredState::check_pass(LayerRange layers, Index first,
                              std::span<const TokenId> tokens) const {
  if (!layers.valid_for(n_layers_)) {
    throw ConfigError("layer range [" + std::to_string(layers.start) + ", " +
                      std::to_string(layers.end) + "] invalid for " +
                      std::to_string(n_layers_) + " layers");
  }
  const auto count = static_cast<Index>(tokens.size());
  if (first < 0) throw AlignmentError(layers.start, first, "negative position");
  if (first + count > capacity_) {
    throw CapacityError("positions up to " + std::to_string(first + count) +
                        " exceed capacity " + std::to_string(capacity_));
  }
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    const Index filled = filled_len(layer);
    if (filled < first) {
      throw AlignmentError(layer, filled, "gap: layer filled to " + std::to_string(filled) +
                                              ", pass starts at " + std::to_string(first));
    }
    if (filled > first) {
      throw AlignmentError(layer, first, "overlap: layer already filled to " +
                                             std::to_string(filled));
    }
  }
  if (layers.start > 1) {
    const int below = layers.start - 1;
    if (!buffers_hidden(below)) {
      throw AlignmentError(below, first, "no hidden-state buffer to resume from");
    }
    const Index have = filled_len(below);
    if (have < first + count) {
      throw AlignmentError(below, have, "missing hidden state");
    }
  }
  check_occupants(layers.start, first, tokens);
}

void LayeredState::occupy(Index first, std::span<const TokenId> tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto p = static_cast<std::size_t>(first) + i;
    if (p < occupants_.size()) continue;
    const std::uint64_t prev = p == 0 ? kPrefixSeed : prefix_keys_[p - 1];
    occupants_.push_back(tokens[i]);
    prefix_keys_.push_back(extend_prefix_key(prev, tokens[i]));
  }
}

void LayeredState::append_layer(int layer, Index first, std::span<const TokenId> tokens,
                                const Matrix& keys, const Matrix& values,
                                const Matrix* hidden) {
  check_layer(layer);
  auto& store = layers_[static_cast<std::size_t>(layer - 1)];
  const auto count = static_cast<Index>(tokens.size());
  if (store.filled != first) {
    throw AlignmentError(layer, std::min(store.filled, first),
                         "append at " + std::to_string(first) + " but layer filled to " +
                             std::to_string(store.filled));
  }
  if (first + count > capacity_) {
    throw CapacityError("positions up to " + std::to_string(first + count) +
                        " exceed capacity " + std::to_string(capacity_));
  }
  if (layer > 1 && filled_len(layer - 1) < first + count) {
    throw AlignmentError(layer - 1, filled_len(layer - 1), "layer below not computed");
  }
  if (keys.rows() != count || values.rows() != count || keys.cols() != width_ ||
      values.cols() != width_) {
    throw AlignmentError(layer, first, "K/V block shape mismatch");
  }
  if (store.buffered &&
      (hidden == nullptr || hidden->rows() != count || hidden->cols() != width_)) {
    throw AlignmentError(layer, first, "hidden block missing or mis-shaped");
  }
  check_occupants(layer, first, tokens);

  reserve_rows(store, first + count);
  occupy(first, tokens);
  if (width_ > 0 && count > 0) {
    store.keys.middleRows(first, count) = keys;
    store.values.middleRows(first, count) = values;
    if (store.buffered) store.hidden.middleRows(first, count) = *hidden;
  }
  for (Index i = 0; i < count; ++i) {
    const Index p = first + i;
    auto& cell = store.computes[static_cast<std::size_t>(p)];
    const std::uint64_t key = prefix_keys_[static_cast<std::size_t>(p)];
    if (cell.count > 0 && cell.prefix_key == key) {
      ++cell.count;
    } else {
      cell.prefix_key = key;
      cell.count = 1;
    }
  }
  store.filled = first + count;
}

void LayeredState::extend(LayerRange layers, Index first, std::span<const TokenId> tokens,
                          std::span<const LayerEntries> entries) {
  check_pass(layers, first, tokens);
  if (static_cast<int>(entries.size()) != layers.size()) {
    throw AlignmentError(layers.start, first, "expected one entry block per layer");
  }
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    const auto& e = entries[static_cast<std::size_t>(layer - layers.start)];
    append_layer(layer, first, tokens, e.keys, e.values,
                 buffers_hidden(layer) ? &e.hidden : nullptr);
  }
}

void LayeredState::prune_to(LayerRange layers, Index keep_len) {
  if (!layers.valid_for(n_layers_)) {
    throw ConfigError("prune_to: invalid layer range");
  }
  if (keep_len < 0) throw AlignmentError(layers.start, keep_len, "negative keep length");
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    const Index filled = filled_len(layer);
    if (keep_len > filled) {
      throw AlignmentError(layer, filled, "prune_to beyond filled length " +
                                              std::to_string(filled));
    }
    if (keep_len < std::min(committed_len_, filled)) {
      throw ProtocolError("prune_to(" + std::to_string(keep_len) + ") at layer " +
                          std::to_string(layer) + " would drop committed positions (committed " +
                          std::to_string(committed_len_) + ")");
    }
  }
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    layers_[static_cast<std::size_t>(layer - 1)].filled = keep_len;
  }
  shrink_occupants();
}

void LayeredState::rollback(Index keep_len) {
  for (int layer = 1; layer <= n_layers_; ++layer) {
    if (filled_len(layer) > keep_len) prune_to({layer, layer}, keep_len);
  }
}

Index LayeredState::restore(LayerRange layers, Index first, std::span<const TokenId> tokens) {
  if (!layers.valid_for(n_layers_) || first < 0) return 0;
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    if (filled_len(layer) != first) return 0;
  }
  if (layers.start > 1 && !buffers_hidden(layers.start - 1)) return 0;

  Index restored = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto p = static_cast<std::size_t>(first) + i;
    if (layers.start > 1 && filled_len(layers.start - 1) <= static_cast<Index>(p)) break;
    std::uint64_t key;
    if (p < occupants_.size()) {
      if (occupants_[p] != tokens[i]) break;
      key = prefix_keys_[p];
    } else {
      key = extend_prefix_key(p == 0 ? kPrefixSeed : prefix_keys_[p - 1], tokens[i]);
    }
    bool intact = true;
    for (int layer = layers.start; layer <= layers.end && intact; ++layer) {
      const auto& store = layers_[static_cast<std::size_t>(layer - 1)];
      intact = p < store.computes.size() && store.computes[p].count > 0 &&
               store.computes[p].prefix_key == key;
    }
    if (!intact) break;
    occupy(static_cast<Index>(p), tokens.subspan(i, 1));
    for (int layer = layers.start; layer <= layers.end; ++layer) {
      layers_[static_cast<std::size_t>(layer - 1)].filled = static_cast<Index>(p) + 1;
    }
    ++restored;
  }
  return restored;
}

void LayeredState::shrink_occupants() {
  Index longest = 0;
  for (const auto& store : layers_) longest = std::max(longest, store.filled);
  occupants_.resize(static_cast<std::size_t>(longest));
  prefix_keys_.resize(static_cast<std::size_t>(longest));
}

Eigen::Block<const Matrix> LayeredState::keys(int layer) const {
  const auto& store = layers_[static_cast<std::size_t>((check_layer(layer), layer - 1))];
  return Eigen::Block<const Matrix>(store.keys, 0, 0, store.filled, width_);
}

Eigen::Block<const Matrix> LayeredState::values(int layer) const {
  const auto& store = layers_[static_cast<std::size_t>((check_layer(layer), layer - 1))];
  return Eigen::Block<const Matrix>(store.values, 0, 0, store.filled, width_);
}

Eigen::Block<const Matrix> LayeredState::hidden(int layer) const {
  check_layer(layer);
  const auto& store = layers_[static_cast<std::size_t>(layer - 1)];
  if (!store.buffered) {
    throw AlignmentError(layer, 0, "layer does not buffer hidden states");
  }
  return Eigen::Block<const Matrix>(store.hidden, 0, 0, store.filled, width_);
}

Matrix::RowXpr LayeredState::mutable_key(int layer, Index position) {
  check_layer(layer);
  auto& store = layers_[static_cast<std::size_t>(layer - 1)];
  if (position < 0 || position >= store.filled) {
    throw AlignmentError(layer, position, "no key stored");
  }
  return store.keys.row(position);
}

std::uint32_t LayeredState::compute_count(int layer, Index position) const {
  check_layer(layer);
  const auto& store = layers_[static_cast<std::size_t>(layer - 1)];
  if (position < 0 || position >= store.filled) return 0;
  const auto& cell = store.computes[static_cast<std::size_t>(position)];
  return cell.prefix_key == prefix_keys_[static_cast<std::size_t>(position)] ? cell.count : 0;
}

bool LayeredState::same_contents(const LayeredState& other) const {
  if (n_layers_ != other.n_layers_ || width_ != other.width_ ||
      exit_layers_ != other.exit_layers_ || committed_len_ != other.committed_len_ ||
      occupants_ != other.occupants_) {
    return false;
  }
  for (int layer = 1; layer <= n_layers_; ++layer) {
    if (filled_len(layer) != other.filled_len(layer)) return false;
    if (keys(layer) != other.keys(layer) || values(layer) != other.values(layer)) return false;
    if (buffers_hidden(layer) && hidden(layer) != other.hidden(layer)) return false;
  }
  return true;
}

Real LayerDiscrepancy::max_diff() const {
  return std::max({max_key_diff, max_value_diff, max_hidden_diff});
}

bool ConsistencyReport::clean() const {
  return occupant_mismatches == 0 && max_diff() == 0;
}

Real ConsistencyReport::max_diff() const {
  Real worst = 0;
  for (const auto& l : layers) worst = std::max(worst, l.max_diff());
  return worst;
}

namespace {

// Largest |a - b| over the rows, with the row where it occurs. NaN counts as infinite.
template <typename A, typename B>
std::pair<Real, Index> row_max_abs_diff(const Eigen::MatrixBase<A>& a,
                                        const Eigen::MatrixBase<B>& b) {
  Real worst = 0;
  Index where = -1;
  for (Index r = 0; r < a.rows(); ++r) {
    for (Index c = 0; c < a.cols(); ++c) {
      Real d = std::abs(a(r, c) - b(r, c));
      if (std::isnan(d)) d = std::numeric_limits<Real>::infinity();
      if (d > worst) {
        worst = d;
        where = r;
      }
    }
  }
  return {worst, where};
}

}  // namespace

ConsistencyReport consistency_check(const LayeredState& state, const ModelBackend& backend,
                                    std::span<const TokenId> tokens) {
  ConsistencyReport report;
  Index longest = 0;
  for (int layer = 1; layer <= state.num_layers(); ++layer) {
    longest = std::max(longest, state.filled_len(layer));
  }
  if (longest == 0) return report;

  const auto occupants = state.occupants();
  const Index comparable = std::min<Index>(longest, static_cast<Index>(tokens.size()));
  for (Index p = 0; p < comparable; ++p) {
    if (occupants[static_cast<std::size_t>(p)] != tokens[static_cast<std::size_t>(p)]) {
      ++report.occupant_mismatches;
    }
  }
  report.occupant_mismatches += longest - comparable;

  LayeredState fresh = backend.make_state(state.exit_layers());
  backend.run_layers({1, state.num_layers()}, tokens, 0, comparable, fresh);

  for (int layer = 1; layer <= state.num_layers(); ++layer) {
    const Index filled = std::min(state.filled_len(layer), comparable);
    if (state.filled_len(layer) == 0) continue;
    LayerDiscrepancy d;
    d.layer = layer;
    d.positions = state.filled_len(layer);
    const auto key_diff = row_max_abs_diff(state.keys(layer).topRows(filled),
                                           fresh.keys(layer).topRows(filled));
    const auto value_diff = row_max_abs_diff(state.values(layer).topRows(filled),
                                             fresh.values(layer).topRows(filled));
    std::pair<Real, Index> hidden_diff{0, -1};
    if (state.buffers_hidden(layer)) {
      hidden_diff = row_max_abs_diff(state.hidden(layer).topRows(filled),
                                     fresh.hidden(layer).topRows(filled));
    }
    d.max_key_diff = key_diff.first;
    d.max_value_diff = value_diff.first;
    d.max_hidden_diff = hidden_diff.first;
    for (const auto& diff : {key_diff, value_diff, hidden_diff}) {
      if (diff.first > 0 && diff.first >= d.max_diff()) d.worst_position = diff.second;
    }
    report.layers.push_back(d);
  }
  return report;
}

}  // namespace hsd
