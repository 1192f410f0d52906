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

#ifndef HSD_DECODE_HPP_
#define HSD_DECODE_HPP_

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hsd/backend.hpp"
#include "hsd/cost.hpp"
#include "hsd/layered_state.hpp"
#include "hsd/types.hpp"

namespace hsd {

/// Which tokens of a verifier distribution accept a draft token.
/// Only greedy_top1 keeps decoding lossless.
struct AcceptancePolicy {
  enum class Mode { greedy_top1, top_k };
  Mode mode = Mode::greedy_top1;
  int k = 1;

  static AcceptancePolicy greedy() { return {}; }
  static AcceptancePolicy top(int k) { return {Mode::top_k, k}; }
  bool lossless() const { return mode == Mode::greedy_top1; }
  std::string name() const;
  void validate() const;
};

/// Accepted token ids in decreasing score order, ties to the lowest id.
/// A one-hot distribution ranks only its token, so any k yields a singleton.
std::vector<TokenId> top_predictions(const TokenDistribution& dist,
                                     const AcceptancePolicy& policy);

struct HiSpecConfig {
  int draft_layer = 0;   // L_d
  int verify_layer = 0;  // L_i
  int final_layer = 0;   // L_f, the backend depth
  int draft_len = 2;     // N_d
  int window = 4;        // N_i
  AcceptancePolicy policy;
  Index max_new_tokens = 64;
  std::optional<TokenId> eos;

  /// L_d = ceil(L_f / 8), L_i = max(ceil(L_f / 4), L_d + 1).
  static HiSpecConfig defaults(int n_layers);
  void validate() const;
};

struct SelfSpecConfig {
  int draft_layer = 0;
  int final_layer = 0;
  int draft_len = 2;
  AcceptancePolicy policy;
  Index max_new_tokens = 64;
  std::optional<TokenId> eos;

  void validate() const;
};

enum class Provenance { draft, draft_accepted, intermediate_bonus };

/// Tokens awaiting final-layer verification, each tagged with its origin.
struct TentativeBuffer {
  std::vector<TokenId> tokens;
  std::vector<Provenance> provenance;

  Index size() const { return static_cast<Index>(tokens.size()); }
  bool empty() const { return tokens.empty(); }
  void push(TokenId token, Provenance p);
  void clear();
};

namespace event {

struct Prefill {
  Index positions = 0;  // prompt positions computed at every layer
};
struct Draft {
  Index first_position = 0;  // sequence position of tokens[0]
  std::vector<TokenId> tokens;
  Index reused = 0;  // draft steps served from restored entries, no pass run
};
struct IntermediateVerify {
  Index first_position = 0;
  Index proposed = 0;
  std::vector<TokenId> accepted;
  std::optional<TokenId> bonus;
  Index reused = 0;  // positions restored instead of recomputed
};
struct TargetVerify {
  Index first_position = 0;
  TentativeBuffer buffer;
  std::vector<TokenId> accepted;
  std::optional<TokenId> bonus;
  Index flushed = 0;
  std::string trigger;  // "window", "eos", "budget" or "round"
};
struct Commit {
  std::vector<TokenId> tokens;
};

}  // namespace event

using TraceEvent = std::variant<event::Prefill, event::Draft, event::IntermediateVerify,
                                event::TargetVerify, event::Commit>;

enum class Strategy { vanilla, selfspec, hispec };
std::string strategy_name(Strategy s);

struct DecodeTrace {
  Strategy strategy = Strategy::vanilla;
  int draft_layer = 0;   // 0 for vanilla
  int verify_layer = 0;  // 0 unless hispec
  int final_layer = 0;   // exit layer of the authoritative verifier
  Index prompt_len = 0;
  std::vector<TraceEvent> events;

  /// Concatenation of every Commit event.
  std::vector<TokenId> committed() const;
};

/// Recomputes the cost ledger from the trace alone.
CostLedger ledger_from_trace(const DecodeTrace& trace);

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated tokens, prompt excluded
  DecodeTrace trace;
  CostLedger ledger;
  DecodeStats stats;
};

struct DecodeHooks {
  /// Called around each final-layer verification with the state and the
  /// sequence its occupants belong to (`before` = buffer still tentative).
  std::function<void(const LayeredState&, std::span<const TokenId>, bool before)>
      on_target_boundary;
  std::function<void(const LayeredState&, std::span<const TokenId>)> on_finish;
};

/// Greedily emits n tokens from layers 1..layer after `context`, extending
/// the state by one position per pass. Positions whose pruned entries are
/// still intact for the same prefix are restored rather than recomputed;
/// `reused` receives how many.
std::vector<TokenId> generate_next(const ModelBackend& backend, int layer,
                                   std::span<const TokenId> context, Index n,
                                   LayeredState& state, CostLedger* ledger = nullptr,
                                   Phase phase = Phase::draft, Index* reused = nullptr);

enum class BonusRule { always, on_mismatch };

struct VerifyResult {
  std::vector<TokenId> accepted;
  std::optional<TokenId> bonus;
  bool mismatch = false;
};

/// Checks `draft` (which follows `context`) at verifier_layer in one pass
/// per missing layer segment and returns its longest accepted prefix plus,
/// per `rule`, one greedy token from the verifier. Rejected positions are
/// pruned from every layer.
VerifyResult leading_substring_verify(const ModelBackend& backend,
                                      std::span<const TokenId> draft, int verifier_layer,
                                      std::span<const TokenId> context, LayeredState& state,
                                      const AcceptancePolicy& policy,
                                      BonusRule rule = BonusRule::always,
                                      CostLedger* ledger = nullptr,
                                      Phase phase = Phase::target_verify,
                                      Index* reused = nullptr);

/// Plain greedy decoding at `layer` (default: the final layer).
DecodeResult vanilla_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                            Index max_new_tokens, std::optional<int> layer = std::nullopt,
                            std::optional<TokenId> eos = std::nullopt,
                            const DecodeHooks& hooks = {});

/// Draft at one early exit, verify at the final layer.
DecodeResult selfspec_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                             const SelfSpecConfig& config, const DecodeHooks& hooks = {});

/// Draft at L_d, tentatively verify at L_i into a buffer, verify the buffer
/// at L_f once it reaches the window, the budget, or an end token.
DecodeResult hispec_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                           const HiSpecConfig& config, const DecodeHooks& hooks = {});

}  // namespace hsd

#endif  // HSD_DECODE_HPP_
