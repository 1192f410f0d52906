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

#ifndef HSD_SYNTHETIC_HPP_
#define HSD_SYNTHETIC_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsd/backend.hpp"
#include "hsd/types.hpp"

namespace hsd {

/// Closed-form layered model with a controlled agreement rate per layer.
///
/// For a context c, let h = context_hash(seed, last `context_window` tokens of c).
/// The final-layer token is t* = mix64(h ^ kTargetTag) mod vocab. A single
/// uniform draw u = unit_interval(mix64(h ^ kAgreementTag)) is shared by all
/// layers: layer l predicts t* iff u < agreement[l - 1], otherwise the decoy
///   (t* + 1 + mix64(h ^ kDecoyTag) mod (vocab - 1)) mod vocab.
/// Sharing u nests correctness across a monotone profile (a correct shallow
/// layer implies every deeper layer is correct) and sharing the decoy makes
/// wrong layers agree with each other, as early exits of one network tend to.
/// The marginal match rate of layer l is agreement[l - 1] either way.
struct SyntheticModelSpec {
  int n_layers = 32;
  int vocab_size = 256;
  std::uint64_t seed = 0;
  std::vector<Real> agreement;  // agreement[l - 1] = alpha(l), alpha(n_layers) == 1
  int context_window = 4;
  Index max_seq_len = 4096;

  Real alpha(int layer) const { return agreement.at(static_cast<std::size_t>(layer - 1)); }
  void validate() const;
};

inline constexpr std::uint64_t kContextTag = 0x636f6e7465787431ULL;    // "context1"
inline constexpr std::uint64_t kTargetTag = 0x7461726765743a2aULL;     // "target:*"
inline constexpr std::uint64_t kAgreementTag = 0x6167726565737521ULL;  // "agrees!"
inline constexpr std::uint64_t kDecoyTag = 0x6465636f79746f6bULL;      // "decoytok"

std::uint64_t context_hash(std::uint64_t seed, std::span<const TokenId> context, int window);

struct SyntheticOutcome {
  TokenId token = 0;   // prediction at the requested layer
  TokenId target = 0;  // final-layer prediction t*
  Real draw = 0;       // shared uniform u
};

SyntheticOutcome synth_outcome(const SyntheticModelSpec& spec, int layer,
                               std::span<const TokenId> context);

/// One-hot distribution over the next token after `context` at `layer`.
TokenDistribution synth_predict(const SyntheticModelSpec& spec, int layer,
                                std::span<const TokenId> context);

/// Piecewise-linear profile through (layer, alpha) anchors; the last anchor
/// must be (n_layers, 1). Layers below the first anchor take its value.
std::vector<Real> interpolate_profile(int n_layers, const std::map<int, Real>& anchors);

/// Rises concavely from 0 at layer 1 to `quarter_alpha` at ceil(n/4), then
/// linearly to 1 at the final layer.
std::vector<Real> quarter_depth_profile(int n_layers, Real quarter_alpha);

/// Named calibrations: "fig3-69" (any depth, default 32) and
/// "llama70b-sharegpt" (80 layers).
SyntheticModelSpec calibrate_preset(std::string_view name,
                                    std::optional<int> n_layers = std::nullopt);
std::vector<std::string> preset_names();

/// ModelBackend over a SyntheticModelSpec. Layer passes do the same fill /
/// prune bookkeeping as a real model on a width-0 state.
class SyntheticBackend final : public ModelBackend {
 public:
  explicit SyntheticBackend(SyntheticModelSpec spec);

  const SyntheticModelSpec& spec() const { return spec_; }

  int num_layers() const override { return spec_.n_layers; }
  int vocab_size() const override { return spec_.vocab_size; }
  Index max_seq_len() const override { return spec_.max_seq_len; }
  int state_width() const override { return 0; }

  std::vector<TokenDistribution> run_layers(LayerRange layers, std::span<const TokenId> tokens,
                                            Index first, Index count,
                                            LayeredState& state) const override;
  TokenDistribution buffered_distribution(int layer, std::span<const TokenId> tokens,
                                          Index position,
                                          const LayeredState& state) const override;

 private:
  SyntheticModelSpec spec_;
};

}  // namespace hsd

#endif  // HSD_SYNTHETIC_HPP_
