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

#include "hsd/cost.hpp"

#include <limits>
#include <stdexcept>

namespace hsd {

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::prefill: return "prefill";
    case Phase::draft: return "draft";
    case Phase::intermediate_verify: return "intermediate_verify";
    case Phase::target_verify: return "target_verify";
  }
  return "?";
}

void CostLedger::record_pass(Phase phase, int layers, Index positions) {
  if (layers <= 0 || positions <= 0) {
    throw std::invalid_argument("record_pass: layers and positions must be positive");
  }
  auto& p = phases_[static_cast<std::size_t>(phase)];
  p.sequential_depth_units += layers;
  p.position_layer_units += static_cast<Index>(layers) * positions;
  ++p.pass_count;
}

Index CostLedger::sequential_units(bool include_prefill) const {
  Index total = 0;
  for (Phase ph : kAllPhases) {
    if (ph != Phase::prefill || include_prefill) total += phase(ph).sequential_depth_units;
  }
  return total;
}

Index CostLedger::position_layer_units(bool include_prefill) const {
  Index total = 0;
  for (Phase ph : kAllPhases) {
    if (ph != Phase::prefill || include_prefill) total += phase(ph).position_layer_units;
  }
  return total;
}

Index CostLedger::pass_count(bool include_prefill) const {
  Index total = 0;
  for (Phase ph : kAllPhases) {
    if (ph != Phase::prefill || include_prefill) total += phase(ph).pass_count;
  }
  return total;
}

CostLedger& CostLedger::operator+=(const CostLedger& other) {
  for (std::size_t i = 0; i < phases_.size(); ++i) {
    phases_[i].sequential_depth_units += other.phases_[i].sequential_depth_units;
    phases_[i].position_layer_units += other.phases_[i].position_layer_units;
    phases_[i].pass_count += other.phases_[i].pass_count;
  }
  return *this;
}

DecodeStats& DecodeStats::operator+=(const DecodeStats& other) {
  committed += other.committed;
  draft_proposed += other.draft_proposed;
  intermediate_accepted += other.intermediate_accepted;
  target_proposed += other.target_proposed;
  target_accepted += other.target_accepted;
  flushed += other.flushed;
  return *this;
}

Real relative_throughput(Index subject_tokens, const CostLedger& subject, Index baseline_tokens,
                         const CostLedger& baseline) {
  const Index subject_units = subject.sequential_units();
  const Index baseline_units = baseline.sequential_units();
  if (baseline_tokens <= 0 || baseline_units <= 0 || subject_units <= 0) {
    throw UndefinedRatioError("relative_throughput: zero-cost or empty ledger");
  }
  const Real subject_rate = Real(subject_tokens) / Real(subject_units);
  const Real baseline_rate = Real(baseline_tokens) / Real(baseline_units);
  return subject_rate / baseline_rate;
}

namespace {

Real ratio_or_nan(Index num, Index den) {
  return den == 0 ? std::numeric_limits<Real>::quiet_NaN() : Real(num) / Real(den);
}

}  // namespace

ThroughputReport throughput_report(const DecodeStats& stats, const CostLedger& ledger,
                                   Index baseline_tokens, const CostLedger& baseline) {
  ThroughputReport r;
  r.committed_tokens = stats.committed;
  r.tokens_per_sequential_unit = ratio_or_nan(stats.committed, ledger.sequential_units());
  r.relative_throughput = relative_throughput(stats.committed, ledger, baseline_tokens, baseline);
  r.acceptance_rate_intermediate = ratio_or_nan(stats.intermediate_accepted, stats.draft_proposed);
  r.acceptance_rate_target = ratio_or_nan(stats.target_accepted, stats.target_proposed);
  r.flushed_tokens = stats.flushed;
  return r;
}

Real verification_wall_ratio(int draft_layers, int target_layers, Index positions_per_verify) {
  if (draft_layers <= 0 || target_layers <= 0 || positions_per_verify <= 0) {
    throw std::invalid_argument("verification_wall_ratio: inputs must be positive");
  }
  return Real(target_layers) / Real(draft_layers);
}

std::vector<WallRow> reference_wall_table(Index positions_per_verify) {
  struct Pair {
    const char* target;
    int target_layers;
    const char* draft;
    int draft_layers;
    Real measured;
  };
  static constexpr Pair kPairs[] = {
      {"opt-66b", 64, "opt-1.3b", 24, 2.9},
      {"opt-66b", 64, "opt-2.7b", 32, 2.2},
      {"opt-66b", 64, "opt-6.7b", 32, 2.0},
      {"llama-3.1-70b", 80, "llama-3.2-1b", 16, 6.0},
      {"llama-3.1-70b", 80, "llama-3.2-3b", 28, 4.0},
      {"llama-3.1-70b", 80, "llama-3.1-8b", 32, 2.4},
      {"llama-3.1-405b", 126, "llama-3.2-1b", 16, 10.3},
      {"llama-3.1-405b", 126, "llama-3.2-3b", 28, 6.9},
      {"llama-3.1-405b", 126, "llama-3.1-8b", 32, 4.2},
  };
  std::vector<WallRow> rows;
  for (const auto& p : kPairs) {
    rows.push_back({p.target, p.target_layers, p.draft, p.draft_layers,
                    verification_wall_ratio(p.draft_layers, p.target_layers, positions_per_verify),
                    p.measured});
  }
  return rows;
}

}  // namespace hsd
