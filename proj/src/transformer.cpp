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

#include "hsd/transformer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "hsd/hash.hpp"
#include "hsd/kernels.hpp"

namespace hsd {

namespace {

constexpr Real kNormEps = 1e-6;

// Uniform in [-a, a) with a = sqrt(3 / fan_in): unit-variance inputs stay
// unit-variance. Built from raw mt19937_64 words, which are specified bit
// for bit by the standard, unlike the std:: distributions.
Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, Index fan_in) {
  const Real bound = std::sqrt(Real(3) / static_cast<Real>(fan_in));
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = (2 * unit_interval(rng()) - 1) * bound;
  }
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 3) throw ConfigError("n_layers must be >= 3 (got " + std::to_string(n_layers) + ")");
  if (d_model < 1) throw ConfigError("d_model must be positive");
  if (n_heads < 1) throw ConfigError("n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model not divisible by n_heads (" + std::to_string(d_model) + " % " +
                      std::to_string(n_heads) + " != 0)");
  }
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
}

Transformer::Transformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  const Index d = config_.d_model;
  const Index ff = 4 * d;
  std::mt19937_64 rng(config_.seed);
  embedding_ = random_matrix(rng, config_.vocab_size, d, 1);
  blocks_.reserve(static_cast<std::size_t>(config_.n_layers));
  for (int layer = 0; layer < config_.n_layers; ++layer) {
    Block b;
    b.attn_gain = Vector::Ones(d);
    b.wq = random_matrix(rng, d, d, d);
    b.wk = random_matrix(rng, d, d, d);
    b.wv = random_matrix(rng, d, d, d);
    b.wo = random_matrix(rng, d, d, d);
    b.mlp_gain = Vector::Ones(d);
    b.w_up = random_matrix(rng, ff, d, d);
    b.w_down = random_matrix(rng, d, ff, ff);
    blocks_.push_back(std::move(b));
  }
  final_gain_ = Vector::Ones(d);
  head_ = random_matrix(rng, config_.vocab_size, d, d);
}

Transformer init_model(const ModelConfig& config) { return Transformer(config); }

Matrix Transformer::forward_range(LayerRange layers, std::span<const TokenId> tokens,
                                  Index first, Index count, LayeredState& state) const {
  const Index d = config_.d_model;
  if (state.width() != d || state.num_layers() != config_.n_layers) {
    throw ConfigError("state shape does not match the model");
  }
  if (count < 0 || first < 0 || static_cast<Index>(tokens.size()) < first + count) {
    throw AlignmentError(layers.start, first + count, "token sequence does not cover the pass");
  }
  const auto pass_tokens = tokens.subspan(static_cast<std::size_t>(first),
                                          static_cast<std::size_t>(count));
  state.check_pass(layers, first, pass_tokens);
  for (TokenId t : pass_tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    }
  }

  Matrix x(count, d);
  if (layers.start == 1) {
    for (Index i = 0; i < count; ++i) x.row(i) = embedding_.row(pass_tokens[static_cast<std::size_t>(i)]);
  } else {
    x = state.hidden(layers.start - 1).middleRows(first, count);
  }
  if (count == 0) return x;

  Matrix keys(first + count, d);
  Matrix values(first + count, d);
  Matrix new_keys(count, d);
  Matrix new_values(count, d);
  Matrix queries(count, d);
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    const Block& b = blocks_[static_cast<std::size_t>(layer - 1)];
    for (Index i = 0; i < count; ++i) {
      const Vector xn = kernels::rms_norm(x.row(i).transpose(), b.attn_gain, kNormEps);
      Vector q = kernels::matvec(b.wq, xn);
      Vector k = kernels::matvec(b.wk, xn);
      kernels::apply_rope(q, first + i, config_.n_heads);
      kernels::apply_rope(k, first + i, config_.n_heads);
      queries.row(i) = q.transpose();
      new_keys.row(i) = k.transpose();
      new_values.row(i) = kernels::matvec(b.wv, xn).transpose();
    }
    keys.topRows(first) = state.keys(layer);
    values.topRows(first) = state.values(layer);
    keys.bottomRows(count) = new_keys;
    values.bottomRows(count) = new_values;

    for (Index i = 0; i < count; ++i) {
      const Vector attn = kernels::attend(queries.row(i).transpose(), keys, values, first + i,
                                          config_.n_heads);
      Vector h = x.row(i).transpose() + kernels::matvec(b.wo, attn);
      const Vector hn = kernels::rms_norm(h, b.mlp_gain, kNormEps);
      Vector up = kernels::matvec(b.w_up, hn);
      for (Index j = 0; j < up.size(); ++j) up(j) = kernels::silu(up(j));
      h += kernels::matvec(b.w_down, up);
      x.row(i) = h.transpose();
    }
    state.append_layer(layer, first, pass_tokens, new_keys, new_values,
                       state.buffers_hidden(layer) ? &x : nullptr);
  }
  return x;
}

Vector Transformer::exit_logits(const Eigen::Ref<const Vector>& hidden) const {
  if (hidden.size() != config_.d_model) {
    throw std::invalid_argument("hidden state has " + std::to_string(hidden.size()) +
                                " values, model width is " + std::to_string(config_.d_model));
  }
  return kernels::matvec(head_, kernels::rms_norm(hidden, final_gain_, kNormEps));
}

TokenDistribution Transformer::exit_logits(const HiddenState& hidden) const {
  return TokenDistribution{exit_logits(hidden.values), hidden.position, hidden.layer, std::nullopt};
}

std::vector<TokenDistribution> Transformer::run_layers(LayerRange layers,
                                                       std::span<const TokenId> tokens,
                                                       Index first, Index count,
                                                       LayeredState& state) const {
  const Matrix out = forward_range(layers, tokens, first, count, state);
  std::vector<TokenDistribution> dists;
  dists.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    dists.push_back({exit_logits(out.row(i).transpose()), first + i, layers.end, std::nullopt});
  }
  return dists;
}

TokenDistribution Transformer::buffered_distribution(int layer, std::span<const TokenId>,
                                                     Index position,
                                                     const LayeredState& state) const {
  const auto buffer = state.hidden(layer);
  if (position < 0 || position >= buffer.rows()) {
    throw AlignmentError(layer, position, "no buffered hidden state");
  }
  return {exit_logits(buffer.row(position).transpose()), position, layer, std::nullopt};
}

bool Transformer::same_weights(const Transformer& other) const {
  if (embedding_ != other.embedding_ || head_ != other.head_ ||
      final_gain_ != other.final_gain_ || blocks_.size() != other.blocks_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& a = blocks_[i];
    const Block& b = other.blocks_[i];
    if (a.wq != b.wq || a.wk != b.wk || a.wv != b.wv || a.wo != b.wo || a.w_up != b.w_up ||
        a.w_down != b.w_down || a.attn_gain != b.attn_gain || a.mlp_gain != b.mlp_gain) {
      return false;
    }
  }
  return true;
}

}  // namespace hsd
