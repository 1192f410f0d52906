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

#ifndef HSD_TRANSFORMER_HPP_
#define HSD_TRANSFORMER_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "hsd/backend.hpp"
#include "hsd/types.hpp"

namespace hsd {

struct ModelConfig {
  int n_layers = 8;
  int d_model = 32;
  int n_heads = 4;
  int vocab_size = 64;
  Index max_seq_len = 256;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first violated field.
  void validate() const;
};

/// Seeded-random pre-norm decoder-only transformer with rotary positions
/// and one unembedding head shared by every exit layer.
///
/// Every position is computed with fixed-order reductions, so running a
/// layer range in one call or split across several calls gives identical
/// bits, as does a single position versus a batch.
class Transformer final : public ModelBackend {
 public:
  explicit Transformer(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  int num_layers() const override { return config_.n_layers; }
  int vocab_size() const override { return config_.vocab_size; }
  Index max_seq_len() const override { return config_.max_seq_len; }
  int state_width() const override { return config_.d_model; }

  /// Runs `layers` over positions [first, first + count) and returns their
  /// hidden states at layers.end (one row per position). Inputs are token
  /// embeddings when layers.start == 1, else the hidden states buffered at
  /// layers.start - 1.
  Matrix forward_range(LayerRange layers, std::span<const TokenId> tokens, Index first,
                       Index count, LayeredState& state) const;

  /// Final normalization followed by the shared head.
  TokenDistribution exit_logits(const HiddenState& hidden) const;
  Vector exit_logits(const Eigen::Ref<const Vector>& hidden) const;

  std::vector<TokenDistribution> run_layers(LayerRange layers, std::span<const TokenId> tokens,
                                            Index first, Index count,
                                            LayeredState& state) const override;
  TokenDistribution buffered_distribution(int layer, std::span<const TokenId> tokens,
                                          Index position,
                                          const LayeredState& state) const override;

  /// Whole-weight equality, for determinism checks.
  bool same_weights(const Transformer& other) const;

 private:
  struct Block {
    Vector attn_gain;
    Matrix wq, wk, wv, wo;
    Vector mlp_gain;
    Matrix w_up;    // d_ff x d_model
    Matrix w_down;  // d_model x d_ff
  };

  ModelConfig config_;
  Matrix embedding_;  // vocab x d_model
  std::vector<Block> blocks_;
  Vector final_gain_;
  Matrix head_;  // vocab x d_model
};

Transformer init_model(const ModelConfig& config);

}  // namespace hsd

#endif  // HSD_TRANSFORMER_HPP_
