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

#ifndef HSD_COST_HPP_
#define HSD_COST_HPP_

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "hsd/types.hpp"

namespace hsd {

enum class Phase { prefill, draft, intermediate_verify, target_verify };

inline constexpr std::array<Phase, 4> kAllPhases = {Phase::prefill, Phase::draft,
                                                    Phase::intermediate_verify,
                                                    Phase::target_verify};

std::string_view phase_name(Phase phase);

struct PhaseCost {
  /// Layers traversed, summed over passes; independent of pass width.
  Index sequential_depth_units = 0;
  /// Layers x positions, summed over passes.
  Index position_layer_units = 0;
  Index pass_count = 0;

  friend bool operator==(const PhaseCost&, const PhaseCost&) = default;
};

/// Two-metric cost account of every layer pass in a decode.
///
/// Sequential depth is the latency proxy: a pass over many positions costs
/// as much as a pass over one. Position-layer units are the compute proxy.
/// Prefill is tracked separately and excluded from totals unless asked for.
class CostLedger {
 public:
  void record_pass(Phase phase, int layers, Index positions);

  const PhaseCost& phase(Phase phase) const { return phases_[static_cast<std::size_t>(phase)]; }
  Index sequential_units(bool include_prefill = false) const;
  Index position_layer_units(bool include_prefill = false) const;
  Index pass_count(bool include_prefill = false) const;

  CostLedger& operator+=(const CostLedger& other);
  friend bool operator==(const CostLedger&, const CostLedger&) = default;

 private:
  std::array<PhaseCost, 4> phases_{};
};

/// Token-level counters gathered while decoding.
struct DecodeStats {
  Index committed = 0;
  Index draft_proposed = 0;         // draft tokens offered to the intermediate verifier
  Index intermediate_accepted = 0;  // of those, accepted
  Index target_proposed = 0;        // tokens offered to the final layer
  Index target_accepted = 0;        // of those, accepted
  Index flushed = 0;                // offered to the final layer and discarded

  DecodeStats& operator+=(const DecodeStats& other);
  friend bool operator==(const DecodeStats&, const DecodeStats&) = default;
};

class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

/// (subject tokens / subject sequential units) over the same for the
/// baseline, prefill excluded.
Real relative_throughput(Index subject_tokens, const CostLedger& subject, Index baseline_tokens,
                         const CostLedger& baseline);

struct ThroughputReport {
  Index committed_tokens = 0;
  Real tokens_per_sequential_unit = 0;
  Real relative_throughput = 0;
  Real acceptance_rate_intermediate = 0;  // NaN when nothing was proposed
  Real acceptance_rate_target = 0;        // NaN when nothing was proposed
  Index flushed_tokens = 0;
};

ThroughputReport throughput_report(const DecodeStats& stats, const CostLedger& ledger,
                                   Index baseline_tokens, const CostLedger& baseline);

/// Cost of one target verification pass relative to generating one draft
/// token. A verification pass costs target_layers of sequential depth no
/// matter how many positions it checks, so the ratio is
/// target_layers / draft_layers. This is a structural proxy, not a latency
/// prediction.
Real verification_wall_ratio(int draft_layers, int target_layers, Index positions_per_verify);

struct WallRow {
  std::string target;
  int target_layers = 0;
  std::string draft;
  int draft_layers = 0;
  Real ratio = 0;           // verification_wall_ratio
  Real measured_ratio = 0;  // published latency ratio for the model pair
};

/// Draft/target model pairs from a published latency study, with the
/// decoder depth of each model.
std::vector<WallRow> reference_wall_table(Index positions_per_verify = 7);

}  // namespace hsd

#endif  // HSD_COST_HPP_
