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

#include <span>
#include <vector>

#include "hsd/layered_state.hpp"
#include "hsd/synthetic.hpp"
#include "hsd/transformer.hpp"

namespace hsd {
namespace {

Transformer model() {
  ModelConfig c;
  c.n_layers = 6;
  c.d_model = 16;
  c.n_heads = 2;
  c.vocab_size = 32;
  c.seed = 11;
  return init_model(c);
}

const std::vector<TokenId> kTokens = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

TEST(LayeredStateTest, ExtendAdvancesOnlyTheComputedLayers) {
  const Transformer m = model();
  LayeredState s = m.make_state({2, 4});
  m.run_layers({1, 6}, kTokens, 0, 4, s);
  m.run_layers({1, 2}, kTokens, 4, 2, s);
  EXPECT_EQ(s.filled_len(1), 6);
  EXPECT_EQ(s.filled_len(2), 6);
  EXPECT_EQ(s.filled_len(3), 4);
  EXPECT_EQ(s.filled_len(6), 4);
  EXPECT_EQ(static_cast<Index>(s.occupants().size()), 6);
}

TEST(LayeredStateTest, NonContiguousExtendIsAlignmentError) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  m.run_layers({1, 6}, kTokens, 0, 3, s);
  EXPECT_THROW(m.run_layers({1, 6}, kTokens, 4, 1, s), AlignmentError);
  EXPECT_THROW(m.run_layers({1, 6}, kTokens, 2, 1, s), AlignmentError);
}

TEST(LayeredStateTest, ReplacingATokenRequiresPruning) {
  const Transformer m = model();
  LayeredState s = m.make_state({2});
  m.run_layers({1, 2}, kTokens, 0, 5, s);
  std::vector<TokenId> other = kTokens;
  other[4] = 30;
  // Layer 3 is empty at position 4, but position 4 holds token 5 at layers 1-2.
  m.run_layers({3, 6}, kTokens, 0, 4, s);
  EXPECT_THROW(m.run_layers({3, 6}, other, 4, 1, s), AlignmentError);
  s.rollback(4);
  EXPECT_NO_THROW(m.run_layers({1, 6}, other, 4, 1, s));
}

TEST(LayeredStateTest, ExtendThenPruneRestoresSnapshot) {
  const Transformer m = model();
  LayeredState s = m.make_state({2});
  m.run_layers({1, 6}, kTokens, 0, 5, s);
  s.commit(5);
  const LayeredState snapshot = s;
  m.run_layers({1, 2}, kTokens, 5, 3, s);
  m.run_layers({3, 6}, kTokens, 5, 2, s);
  s.rollback(5);
  EXPECT_TRUE(s.same_contents(snapshot));
}

TEST(LayeredStateTest, PruneToFilledIsNoOp) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  m.run_layers({1, 6}, kTokens, 0, 5, s);
  const LayeredState snapshot = s;
  s.prune_to({1, 6}, 5);
  EXPECT_TRUE(s.same_contents(snapshot));
  EXPECT_THROW(s.prune_to({1, 6}, 6), AlignmentError);
}

TEST(LayeredStateTest, PruningCommittedPositionsIsProtocolError) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  m.run_layers({1, 6}, kTokens, 0, 6, s);
  s.commit(6);
  EXPECT_THROW(s.prune_to({1, 6}, 5), ProtocolError);
  EXPECT_THROW(s.commit(4), ProtocolError);
}

TEST(LayeredStateTest, PruneThenRecomputeMatchesFreshRun) {
  const Transformer m = model();
  std::vector<TokenId> rejected = kTokens;
  rejected[6] = 31;
  rejected[7] = 30;

  LayeredState s = m.make_state({2});
  m.run_layers({1, 6}, kTokens, 0, 6, s);
  m.run_layers({1, 2}, rejected, 6, 2, s);
  s.rollback(6);
  m.run_layers({1, 6}, kTokens, 6, 3, s);

  LayeredState fresh = m.make_state({2});
  m.run_layers({1, 6}, kTokens, 0, 9, fresh);
  EXPECT_TRUE(s.same_contents(fresh));
}

TEST(LayeredStateTest, ComputeCountTracksRepeatedWork) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  m.run_layers({1, 6}, kTokens, 0, 4, s);
  EXPECT_EQ(s.compute_count(3, 3), 1u);
  s.rollback(3);
  m.run_layers({1, 6}, kTokens, 3, 1, s);  // same prefix: redundant
  EXPECT_EQ(s.compute_count(3, 3), 2u);
  s.rollback(3);
  std::vector<TokenId> other = kTokens;
  other[3] = 0;
  m.run_layers({1, 6}, other, 3, 1, s);  // different prefix: new work
  EXPECT_EQ(s.compute_count(3, 3), 1u);
}

TEST(LayeredStateTest, RestoreReadmitsRowsWithTheSamePrefix) {
  const Transformer m = model();
  LayeredState s = m.make_state({2, 4});
  m.run_layers({1, 4}, kTokens, 0, 7, s);
  s.rollback(4);

  const std::span<const TokenId> tail(kTokens.data() + 4, 3);
  EXPECT_EQ(s.restore({1, 2}, 4, tail), 3);
  EXPECT_EQ(s.restore({3, 4}, 4, tail), 3);
  EXPECT_EQ(s.compute_count(4, 6), 1u);

  LayeredState fresh = m.make_state({2, 4});
  m.run_layers({1, 4}, kTokens, 0, 7, fresh);
  EXPECT_TRUE(s.same_contents(fresh));
}

TEST(LayeredStateTest, RestoreStopsAtTheFirstChangedPrefix) {
  const Transformer m = model();
  LayeredState s = m.make_state({2});
  m.run_layers({1, 2}, kTokens, 0, 7, s);
  s.rollback(4);

  std::vector<TokenId> other = kTokens;
  other[5] = 0;
  EXPECT_EQ(s.restore({1, 2}, 4, std::span<const TokenId>(other).subspan(4, 3)), 1);
  EXPECT_EQ(s.filled_len(2), 5);
  // Layers above an unfilled input are never restored.
  EXPECT_EQ(s.restore({3, 6}, 0, std::span<const TokenId>(kTokens).subspan(0, 3)), 0);
}

TEST(ConsistencyCheckTest, CleanAfterIncrementalPasses) {
  const Transformer m = model();
  LayeredState s = m.make_state({2, 4});
  m.run_layers({1, 2}, kTokens, 0, 7, s);
  m.run_layers({3, 4}, kTokens, 0, 6, s);
  m.run_layers({5, 6}, kTokens, 0, 5, s);
  const auto report = consistency_check(s, m, kTokens);
  EXPECT_TRUE(report.clean());
  EXPECT_EQ(report.max_diff(), 0.0);
}

TEST(ConsistencyCheckTest, LocatesPerturbedKey) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  m.run_layers({1, 6}, kTokens, 0, 8, s);
  s.mutable_key(4, 5)(0) += 1e-3;
  const auto report = consistency_check(s, m, kTokens);
  EXPECT_FALSE(report.clean());
  for (const auto& layer : report.layers) {
    if (layer.layer == 4) {
      EXPECT_NEAR(layer.max_key_diff, 1e-3, 1e-12);
      EXPECT_EQ(layer.worst_position, 5);
    } else {
      EXPECT_EQ(layer.max_diff(), 0.0) << "layer " << layer.layer;
    }
  }
}

TEST(ConsistencyCheckTest, EmptyStateGivesEmptyReport) {
  const Transformer m = model();
  LayeredState s = m.make_state({});
  const auto report = consistency_check(s, m, {});
  EXPECT_TRUE(report.layers.empty());
  EXPECT_TRUE(report.clean());
}

TEST(ConsistencyCheckTest, SyntheticStateTracksOccupantsOnly) {
  SyntheticBackend b(calibrate_preset("fig3-69", 8));
  LayeredState s = b.make_state({1, 2});
  b.run_layers({1, 8}, kTokens, 0, 6, s);
  EXPECT_EQ(s.width(), 0);
  EXPECT_TRUE(consistency_check(s, b, kTokens).clean());
}

}  // namespace
}  // namespace hsd
