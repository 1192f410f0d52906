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

#include <gtest/gtest.h>

#include <cmath>

#include "hsd/cost.hpp"

namespace hsd {
namespace {

TEST(CostLedgerTest, RecordPassArithmetic) {
  CostLedger l;
  l.record_pass(Phase::draft, 4, 1);
  EXPECT_EQ(l.phase(Phase::draft).sequential_depth_units, 4);
  EXPECT_EQ(l.phase(Phase::draft).position_layer_units, 4);
  l.record_pass(Phase::target_verify, 24, 5);
  EXPECT_EQ(l.phase(Phase::target_verify).sequential_depth_units, 24);
  EXPECT_EQ(l.phase(Phase::target_verify).position_layer_units, 120);
  EXPECT_EQ(l.sequential_units(), 28);
  EXPECT_EQ(l.pass_count(), 2);
}

TEST(CostLedgerTest, VanillaTenTokensAtThirtyTwoLayers) {
  CostLedger l;
  for (int i = 0; i < 10; ++i) l.record_pass(Phase::target_verify, 32, 1);
  EXPECT_EQ(l.sequential_units(), 320);
}

TEST(CostLedgerTest, PrefillExcludedByDefault) {
  CostLedger l;
  l.record_pass(Phase::prefill, 8, 10);
  l.record_pass(Phase::draft, 2, 1);
  EXPECT_EQ(l.sequential_units(), 2);
  EXPECT_EQ(l.sequential_units(true), 10);
  EXPECT_EQ(l.position_layer_units(true), 82);
}

TEST(CostLedgerTest, RejectsNonPositiveCounts) {
  CostLedger l;
  EXPECT_THROW(l.record_pass(Phase::draft, 0, 1), std::invalid_argument);
  EXPECT_THROW(l.record_pass(Phase::draft, 1, 0), std::invalid_argument);
}

TEST(CostLedgerTest, AccumulatesPerPhase) {
  CostLedger a, b;
  a.record_pass(Phase::draft, 3, 1);
  b.record_pass(Phase::draft, 3, 2);
  b.record_pass(Phase::intermediate_verify, 5, 2);
  a += b;
  EXPECT_EQ(a.phase(Phase::draft).position_layer_units, 9);
  EXPECT_EQ(a.phase(Phase::draft).pass_count, 2);
  EXPECT_EQ(a.phase(Phase::intermediate_verify).sequential_depth_units, 5);
}

TEST(ThroughputTest, LedgerAgainstItselfIsOne) {
  CostLedger l;
  l.record_pass(Phase::draft, 7, 3);
  EXPECT_DOUBLE_EQ(relative_throughput(11, l, 11, l), 1.0);
}

TEST(ThroughputTest, ZeroCostBaselineIsUndefined) {
  CostLedger empty, l;
  l.record_pass(Phase::draft, 1, 1);
  EXPECT_THROW(relative_throughput(1, l, 1, empty), UndefinedRatioError);
  EXPECT_THROW(relative_throughput(1, l, 0, l), UndefinedRatioError);
}

TEST(ThroughputTest, HandComputedAllAcceptRound) {
  // L_f=32, L_d=4, L_i=8, N_d=2, N_i=4, everything accepted: two rounds of
  // two draft passes (4 each) plus one intermediate pass (4) fill the window,
  // then one target pass (24) commits 4 tokens.
  CostLedger spec;
  for (int round = 0; round < 2; ++round) {
    spec.record_pass(Phase::draft, 4, 1);
    spec.record_pass(Phase::draft, 4, 1);
    spec.record_pass(Phase::intermediate_verify, 4, 2);
  }
  spec.record_pass(Phase::target_verify, 24, 4);
  CostLedger vanilla;
  for (int i = 0; i < 4; ++i) vanilla.record_pass(Phase::target_verify, 32, 1);
  EXPECT_DOUBLE_EQ(relative_throughput(4, spec, 4, vanilla), 128.0 / 48.0);
}

TEST(ThroughputTest, ReportRates) {
  DecodeStats s;
  s.committed = 10;
  s.draft_proposed = 8;
  s.intermediate_accepted = 6;
  CostLedger l;
  l.record_pass(Phase::draft, 5, 1);
  const auto r = throughput_report(s, l, 10, l);
  EXPECT_DOUBLE_EQ(r.acceptance_rate_intermediate, 0.75);
  EXPECT_TRUE(std::isnan(r.acceptance_rate_target));
  EXPECT_DOUBLE_EQ(r.relative_throughput, 1.0);
  EXPECT_DOUBLE_EQ(r.tokens_per_sequential_unit, 2.0);
}

TEST(WallTest, RatioExamples) {
  EXPECT_DOUBLE_EQ(verification_wall_ratio(4, 32, 5), 8.0);
  EXPECT_DOUBLE_EQ(verification_wall_ratio(12, 12, 1), 1.0);
  EXPECT_THROW(verification_wall_ratio(0, 32, 1), std::invalid_argument);
}

TEST(WallTest, StrictlyIncreasingInTargetDepth) {
  for (int d = 1; d <= 32; ++d) {
    for (int t = d; t < 160; ++t) {
      EXPECT_LT(verification_wall_ratio(d, t, 4), verification_wall_ratio(d, t + 1, 4));
    }
  }
}

TEST(WallTest, ReferenceTableUsesPublishedDepths) {
  const auto rows = reference_wall_table();
  ASSERT_EQ(rows.size(), 9u);
  for (const auto& r : rows) {
    EXPECT_DOUBLE_EQ(r.ratio, Real(r.target_layers) / r.draft_layers);
    EXPECT_GT(r.measured_ratio, 1.0);
  }
}

}  // namespace
}  // namespace hsd
