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

#include "hsd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hsd/hash.hpp"

namespace hsd {

void SyntheticModelSpec::validate() const {
  if (n_layers < 3) throw ConfigError("n_layers must be >= 3 (got " + std::to_string(n_layers) + ")");
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
  if (context_window < 1) throw ConfigError("context_window must be >= 1");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
  if (static_cast<int>(agreement.size()) != n_layers) {
    throw ConfigError("agreement profile has " + std::to_string(agreement.size()) +
                      " entries, expected " + std::to_string(n_layers));
  }
  for (std::size_t i = 0; i < agreement.size(); ++i) {
    if (!(agreement[i] >= 0 && agreement[i] <= 1)) {
      throw ConfigError("agreement at layer " + std::to_string(i + 1) + " outside [0, 1]");
    }
  }
  if (agreement.back() != 1) throw ConfigError("agreement at the final layer must be 1");
}

std::uint64_t context_hash(std::uint64_t seed, std::span<const TokenId> context, int window) {
  const std::size_t take = std::min(context.size(), static_cast<std::size_t>(window));
  std::uint64_t h = mix64(seed ^ kContextTag);
  for (std::size_t i = context.size() - take; i < context.size(); ++i) {
    h = mix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(context[i])) + 1));
  }
  return h;
}

SyntheticOutcome synth_outcome(const SyntheticModelSpec& spec, int layer,
                               std::span<const TokenId> context) {
  if (context.empty()) throw std::invalid_argument("synth_predict: empty context");
  if (layer < 1 || layer > spec.n_layers) {
    throw std::out_of_range("synth_predict: layer " + std::to_string(layer) + " out of range");
  }
  const auto vocab = static_cast<std::uint64_t>(spec.vocab_size);
  const std::uint64_t h = context_hash(spec.seed, context, spec.context_window);
  SyntheticOutcome out;
  out.target = static_cast<TokenId>(mix64(h ^ kTargetTag) % vocab);
  out.draw = unit_interval(mix64(h ^ kAgreementTag));
  if (out.draw < spec.alpha(layer)) {
    out.token = out.target;
  } else {
    const std::uint64_t offset = 1 + mix64(h ^ kDecoyTag) % (vocab - 1);
    out.token = static_cast<TokenId>((static_cast<std::uint64_t>(out.target) + offset) % vocab);
  }
  return out;
}

TokenDistribution synth_predict(const SyntheticModelSpec& spec, int layer,
                                std::span<const TokenId> context) {
  TokenDistribution dist;
  dist.one_hot = synth_outcome(spec, layer, context).token;
  dist.position = static_cast<Index>(context.size()) - 1;
  dist.source_layer = layer;
  return dist;
}

std::vector<Real> interpolate_profile(int n_layers, const std::map<int, Real>& anchors) {
  if (anchors.empty()) throw ConfigError("profile needs at least one anchor");
  if (anchors.rbegin()->first != n_layers || anchors.rbegin()->second != 1) {
    throw ConfigError("profile must end with (" + std::to_string(n_layers) + ", 1)");
  }
  std::vector<Real> out(static_cast<std::size_t>(n_layers));
  for (int layer = 1; layer <= n_layers; ++layer) {
    auto hi = anchors.lower_bound(layer);
    Real value;
    if (hi->first == layer || hi == anchors.begin()) {
      value = hi->second;
    } else {
      auto lo = std::prev(hi);
      const Real t = Real(layer - lo->first) / Real(hi->first - lo->first);
      value = lo->second + t * (hi->second - lo->second);
    }
    out[static_cast<std::size_t>(layer - 1)] = value;
  }
  return out;
}

std::vector<Real> quarter_depth_profile(int n_layers, Real quarter_alpha) {
  if (n_layers < 3) throw ConfigError("n_layers must be >= 3");
  const int quarter = (n_layers + 3) / 4;
  std::vector<Real> out(static_cast<std::size_t>(n_layers));
  for (int layer = 1; layer <= n_layers; ++layer) {
    Real value;
    if (layer <= quarter) {
      const Real x = quarter == 1 ? Real(1) : Real(layer - 1) / Real(quarter - 1);
      value = quarter_alpha * (1 - (1 - x) * (1 - x));
    } else {
      value = quarter_alpha + (1 - quarter_alpha) * Real(layer - quarter) / Real(n_layers - quarter);
    }
    out[static_cast<std::size_t>(layer - 1)] = value;
  }
  out.back() = 1;
  return out;
}

std::vector<std::string> preset_names() { return {"fig3-69", "llama70b-sharegpt"}; }

SyntheticModelSpec calibrate_preset(std::string_view name, std::optional<int> n_layers) {
  SyntheticModelSpec spec;
  if (name == "fig3-69") {
    spec.n_layers = n_layers.value_or(32);
    spec.agreement = quarter_depth_profile(spec.n_layers, 0.69);
  } else if (name == "llama70b-sharegpt") {
    if (n_layers && *n_layers != 80) {
      throw ConfigError("preset llama70b-sharegpt has 80 layers, not " + std::to_string(*n_layers));
    }
    spec.n_layers = 80;
    spec.agreement = interpolate_profile(80, {{1, 0.0}, {10, 0.397}, {20, 0.581}, {80, 1.0}});
  } else {
    std::ostringstream msg;
    msg << "unknown preset '" << name << "'; available:";
    for (const auto& p : preset_names()) msg << ' ' << p;
    throw ConfigError(msg.str());
  }
  spec.validate();
  return spec;
}

SyntheticBackend::SyntheticBackend(SyntheticModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

std::vector<TokenDistribution> SyntheticBackend::run_layers(LayerRange layers,
                                                            std::span<const TokenId> tokens,
                                                            Index first, Index count,
                                                            LayeredState& state) const {
  if (state.width() != 0 || state.num_layers() != spec_.n_layers) {
    throw ConfigError("state shape does not match the synthetic model");
  }
  if (count < 0 || first < 0 || static_cast<Index>(tokens.size()) < first + count) {
    throw AlignmentError(layers.start, first + count, "token sequence does not cover the pass");
  }
  const auto pass_tokens = tokens.subspan(static_cast<std::size_t>(first),
                                          static_cast<std::size_t>(count));
  state.check_pass(layers, first, pass_tokens);
  const Matrix empty(count, 0);
  for (int layer = layers.start; layer <= layers.end; ++layer) {
    state.append_layer(layer, first, pass_tokens, empty, empty,
                       state.buffers_hidden(layer) ? &empty : nullptr);
  }
  std::vector<TokenDistribution> dists;
  dists.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    dists.push_back(synth_predict(spec_, layers.end, tokens.first(static_cast<std::size_t>(first + i + 1))));
  }
  return dists;
}

TokenDistribution SyntheticBackend::buffered_distribution(int layer,
                                                          std::span<const TokenId> tokens,
                                                          Index position,
                                                          const LayeredState& state) const {
  if (!state.buffers_hidden(layer) || position < 0 || position >= state.filled_len(layer) ||
      position >= static_cast<Index>(tokens.size())) {
    throw AlignmentError(layer, position, "no buffered hidden state");
  }
  return synth_predict(spec_, layer, tokens.first(static_cast<std::size_t>(position + 1)));
}

}  // namespace hsd
