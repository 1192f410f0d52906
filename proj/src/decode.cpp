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

#include "hsd/decode.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hsd {

std::string AcceptancePolicy::name() const {
  return mode == Mode::greedy_top1 ? "greedy" : "top" + std::to_string(k);
}

void AcceptancePolicy::validate() const {
  if (mode == Mode::top_k && k < 1) throw ConfigError("top-k policy needs k >= 1");
}

std::vector<TokenId> top_predictions(const TokenDistribution& dist,
                                     const AcceptancePolicy& policy) {
  if (dist.one_hot) return {*dist.one_hot};
  if (dist.logits.size() == 0) throw std::invalid_argument("top_predictions: empty distribution");
  if (policy.mode == AcceptancePolicy::Mode::greedy_top1) return {argmax_token(dist.logits)};

  std::vector<TokenId> ids(static_cast<std::size_t>(dist.logits.size()));
  std::iota(ids.begin(), ids.end(), 0);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(policy.k, 1)), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (dist.logits(a) != dist.logits(b)) return dist.logits(a) > dist.logits(b);
                      return a < b;
                    });
  ids.resize(n);
  return ids;
}

namespace {

bool accepts(const TokenDistribution& dist, const AcceptancePolicy& policy, TokenId token) {
  if (policy.mode == AcceptancePolicy::Mode::greedy_top1 || dist.one_hot) {
    return greedy_token(dist) == token;
  }
  const auto top = top_predictions(dist, policy);
  return std::find(top.begin(), top.end(), token) != top.end();
}

void check_common(Index max_new_tokens, const AcceptancePolicy& policy) {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  policy.validate();
}

}  // namespace

HiSpecConfig HiSpecConfig::defaults(int n_layers) {
  HiSpecConfig c;
  c.final_layer = n_layers;
  c.draft_layer = (n_layers + 7) / 8;
  c.verify_layer = std::max((n_layers + 3) / 4, c.draft_layer + 1);
  return c;
}

void HiSpecConfig::validate() const {
  if (!(1 <= draft_layer && draft_layer < verify_layer && verify_layer < final_layer)) {
    throw ConfigError("layers must satisfy 1 <= L_d < L_i < L_f (got L_d=" +
                      std::to_string(draft_layer) + ", L_i=" + std::to_string(verify_layer) +
                      ", L_f=" + std::to_string(final_layer) + ")");
  }
  if (draft_len < 1) throw ConfigError("N_d must be >= 1");
  if (window < 1) throw ConfigError("N_i must be >= 1");
  check_common(max_new_tokens, policy);
}

void SelfSpecConfig::validate() const {
  if (!(1 <= draft_layer && draft_layer < final_layer)) {
    throw ConfigError("layers must satisfy 1 <= L_d < L_f (got L_d=" +
                      std::to_string(draft_layer) + ", L_f=" + std::to_string(final_layer) + ")");
  }
  if (draft_len < 1) throw ConfigError("N_d must be >= 1");
  check_common(max_new_tokens, policy);
}

void TentativeBuffer::push(TokenId token, Provenance p) {
  tokens.push_back(token);
  provenance.push_back(p);
}

void TentativeBuffer::clear() {
  tokens.clear();
  provenance.clear();
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::vanilla: return "vanilla";
    case Strategy::selfspec: return "selfspec";
    case Strategy::hispec: return "hispec";
  }
  return "?";
}

std::vector<TokenId> DecodeTrace::committed() const {
  std::vector<TokenId> out;
  for (const auto& e : events) {
    if (const auto* c = std::get_if<event::Commit>(&e)) {
      out.insert(out.end(), c->tokens.begin(), c->tokens.end());
    }
  }
  return out;
}

namespace {

std::vector<LayerRange> segments_for(const DecodeTrace& t) {
  switch (t.strategy) {
    case Strategy::vanilla: return {{1, t.final_layer}};
    case Strategy::selfspec: return {{1, t.draft_layer}, {t.draft_layer + 1, t.final_layer}};
    case Strategy::hispec:
      return {{1, t.draft_layer},
              {t.draft_layer + 1, t.verify_layer},
              {t.verify_layer + 1, t.final_layer}};
  }
  return {};
}

}  // namespace

CostLedger ledger_from_trace(const DecodeTrace& trace) {
  CostLedger ledger;
  const auto segments = segments_for(trace);
  const int below_target =
      trace.strategy == Strategy::hispec ? trace.verify_layer : trace.draft_layer;
  for (const auto& e : trace.events) {
    if (const auto* p = std::get_if<event::Prefill>(&e)) {
      for (const auto& s : segments) ledger.record_pass(Phase::prefill, s.size(), p->positions);
    } else if (const auto* d = std::get_if<event::Draft>(&e)) {
      for (Index i = d->reused; i < static_cast<Index>(d->tokens.size()); ++i) {
        ledger.record_pass(Phase::draft, trace.draft_layer, 1);
      }
    } else if (const auto* iv = std::get_if<event::IntermediateVerify>(&e)) {
      if (iv->proposed > iv->reused) {
        ledger.record_pass(Phase::intermediate_verify, trace.verify_layer - trace.draft_layer,
                           iv->proposed - iv->reused);
      }
    } else if (const auto* tv = std::get_if<event::TargetVerify>(&e)) {
      ledger.record_pass(Phase::target_verify, trace.final_layer - below_target,
                         tv->buffer.size());
    } else if (const auto* c = std::get_if<event::Commit>(&e)) {
      if (trace.strategy == Strategy::vanilla) {
        for (std::size_t i = 0; i < c->tokens.size(); ++i) {
          ledger.record_pass(Phase::target_verify, trace.final_layer, 1);
        }
      }
    }
  }
  return ledger;
}

namespace {

// Brings layers 1..layer up to date through position upto - 1, one pass per
// segment between the state's exit layers, and returns the distributions at
// `layer` for positions [from, upto). Positions computed before this call
// come from the hidden-state buffer. A segment ending at a buffered layer
// first restores intact pruned rows; `reused` counts those at `layer`.
std::vector<TokenDistribution> advance(const ModelBackend& backend, LayeredState& state,
                                       int layer, std::span<const TokenId> seq, Index from,
                                       Index upto, CostLedger* ledger, Phase phase,
                                       Index* reused = nullptr) {
  std::vector<int> bounds;
  for (int e : state.exit_layers()) {
    if (e < layer) bounds.push_back(e);
  }
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
  bounds.push_back(layer);

  std::vector<TokenDistribution> fresh;
  Index fresh_start = upto;
  int start = 1;
  for (int end : bounds) {
    Index filled = state.filled_len(end);
    if (filled < upto && state.buffers_hidden(end)) {
      const Index restored = state.restore(
          {start, end}, filled,
          seq.subspan(static_cast<std::size_t>(filled), static_cast<std::size_t>(upto - filled)));
      if (reused && end == layer) *reused += restored;
      filled += restored;
    }
    if (filled < upto) {
      const Index count = upto - filled;
      auto dists = backend.run_layers({start, end}, seq, filled, count, state);
      if (ledger) ledger->record_pass(phase, end - start + 1, count);
      if (end == layer) {
        fresh = std::move(dists);
        fresh_start = filled;
      }
    }
    start = end + 1;
  }

  std::vector<TokenDistribution> out;
  out.reserve(static_cast<std::size_t>(std::max<Index>(upto - from, 0)));
  for (Index p = from; p < upto; ++p) {
    if (p >= fresh_start) {
      out.push_back(std::move(fresh[static_cast<std::size_t>(p - fresh_start)]));
    } else {
      if (!state.buffers_hidden(layer)) {
        throw ProtocolError("layer " + std::to_string(layer) + " position " + std::to_string(p) +
                            " was computed earlier but its hidden state is not buffered");
      }
      out.push_back(backend.buffered_distribution(layer, seq, p, state));
    }
  }
  return out;
}

void check_layer(const ModelBackend& backend, int layer) {
  if (layer < 1 || layer > backend.num_layers()) {
    throw ConfigError("layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(backend.num_layers()) + "]");
  }
}

void check_prompt(const ModelBackend& backend, std::span<const TokenId> prompt,
                  Index max_new_tokens) {
  if (prompt.empty()) throw ConfigError("prompt must not be empty");
  for (TokenId t : prompt) {
    if (t < 0 || t >= backend.vocab_size()) {
      throw ConfigError("prompt token " + std::to_string(t) + " outside vocabulary");
    }
  }
  const Index need = static_cast<Index>(prompt.size()) + max_new_tokens;
  if (need > backend.max_seq_len()) {
    throw CapacityError("prompt length + max_new_tokens = " + std::to_string(need) +
                        " exceeds max_seq_len " + std::to_string(backend.max_seq_len()));
  }
}

void prefill(const ModelBackend& backend, LayeredState& state, int layer,
             std::span<const TokenId> prompt, DecodeResult& result) {
  const auto n = static_cast<Index>(prompt.size());
  if (n > 1) {
    advance(backend, state, layer, prompt, n - 1, n - 1, &result.ledger, Phase::prefill);
    result.trace.events.push_back(event::Prefill{n - 1});
  }
  state.commit(n);
}

// Keeps `tokens` up to and including the first eos; returns whether one was found.
bool truncate_at_eos(std::vector<TokenId>& tokens, std::optional<TokenId> eos) {
  if (!eos) return false;
  auto it = std::find(tokens.begin(), tokens.end(), *eos);
  if (it == tokens.end()) return false;
  tokens.erase(it + 1, tokens.end());
  return true;
}

void finish(const ModelBackend&, LayeredState& state, const std::vector<TokenId>& seq,
            std::span<const TokenId> prompt, const DecodeHooks& hooks, DecodeResult& result) {
  state.rollback(static_cast<Index>(seq.size()));
  result.tokens.assign(seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end());
  result.stats.committed = static_cast<Index>(result.tokens.size());
  if (hooks.on_finish) hooks.on_finish(state, seq);
}

}  // namespace

std::vector<TokenId> generate_next(const ModelBackend& backend, int layer,
                                   std::span<const TokenId> context, Index n,
                                   LayeredState& state, CostLedger* ledger, Phase phase,
                                   Index* reused) {
  check_layer(backend, layer);
  if (context.empty()) throw std::invalid_argument("generate_next: empty context");
  if (static_cast<Index>(context.size()) + n > backend.max_seq_len()) {
    throw CapacityError("generate_next: context + n exceeds max_seq_len");
  }
  std::vector<TokenId> seq(context.begin(), context.end());
  std::vector<TokenId> out;
  for (Index i = 0; i < n; ++i) {
    const auto len = static_cast<Index>(seq.size());
    auto dists = advance(backend, state, layer, seq, len - 1, len, ledger, phase, reused);
    const TokenId t = greedy_token(dists.back());
    seq.push_back(t);
    out.push_back(t);
  }
  return out;
}

VerifyResult leading_substring_verify(const ModelBackend& backend,
                                      std::span<const TokenId> draft, int verifier_layer,
                                      std::span<const TokenId> context, LayeredState& state,
                                      const AcceptancePolicy& policy, BonusRule rule,
                                      CostLedger* ledger, Phase phase, Index* reused) {
  check_layer(backend, verifier_layer);
  if (context.empty()) throw std::invalid_argument("leading_substring_verify: empty context");
  const auto m = static_cast<Index>(context.size());
  const auto k = static_cast<Index>(draft.size());
  if (m + k > backend.max_seq_len()) {
    throw CapacityError("leading_substring_verify: context + draft exceeds max_seq_len");
  }
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), draft.begin(), draft.end());

  // With BonusRule::always the position after the draft is computed in the
  // same pass, so full acceptance needs no second pass.
  const Index upto = rule == BonusRule::always ? m + k : m + k - 1;
  auto dists = advance(backend, state, verifier_layer, seq, m - 1, upto, ledger, phase, reused);

  VerifyResult r;
  Index j = 0;
  while (j < k && accepts(dists[static_cast<std::size_t>(j)], policy,
                          draft[static_cast<std::size_t>(j)])) {
    ++j;
  }
  r.accepted.assign(draft.begin(), draft.begin() + j);
  if (j < k) {
    r.mismatch = true;
    r.bonus = greedy_token(dists[static_cast<std::size_t>(j)]);
    state.rollback(m + j);
  } else if (rule == BonusRule::always) {
    r.bonus = greedy_token(dists[static_cast<std::size_t>(k)]);
  }
  return r;
}

DecodeResult vanilla_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                            Index max_new_tokens, std::optional<int> layer,
                            std::optional<TokenId> eos, const DecodeHooks& hooks) {
  const int L = layer.value_or(backend.num_layers());
  check_layer(backend, L);
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  check_prompt(backend, prompt, max_new_tokens);

  DecodeResult result;
  result.trace = {Strategy::vanilla, 0, 0, L, static_cast<Index>(prompt.size()), {}};
  LayeredState state = backend.make_state({});
  prefill(backend, state, L, prompt, result);

  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (Index produced = 0; produced < max_new_tokens; ++produced) {
    const auto len = static_cast<Index>(seq.size());
    auto dists = advance(backend, state, L, seq, len - 1, len, &result.ledger,
                         Phase::target_verify);
    const TokenId t = greedy_token(dists.back());
    seq.push_back(t);
    state.commit(len + 1);
    result.trace.events.push_back(event::Commit{{t}});
    if (eos && t == *eos) break;
  }
  finish(backend, state, seq, prompt, hooks, result);
  return result;
}

DecodeResult selfspec_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                             const SelfSpecConfig& config, const DecodeHooks& hooks) {
  config.validate();
  if (config.final_layer != backend.num_layers()) {
    throw ConfigError("L_f must equal the backend depth " + std::to_string(backend.num_layers()));
  }
  check_prompt(backend, prompt, config.max_new_tokens);

  DecodeResult result;
  result.trace = {Strategy::selfspec, config.draft_layer, 0, config.final_layer,
                  static_cast<Index>(prompt.size()), {}};
  LayeredState state = backend.make_state({config.draft_layer});
  prefill(backend, state, config.final_layer, prompt, result);

  std::vector<TokenId> y(prompt.begin(), prompt.end());
  Index committed = 0;
  bool stop = false;
  while (!stop && committed < config.max_new_tokens) {
    const Index k = std::min<Index>(config.draft_len, config.max_new_tokens - committed);
    const auto c = static_cast<Index>(y.size());
    Index reused = 0;
    auto draft = generate_next(backend, config.draft_layer, y, k, state, &result.ledger,
                               Phase::draft, &reused);
    result.trace.events.push_back(event::Draft{c, draft, reused});

    TentativeBuffer buffer;
    for (TokenId t : draft) buffer.push(t, Provenance::draft);
    if (hooks.on_target_boundary) {
      std::vector<TokenId> seq = y;
      seq.insert(seq.end(), draft.begin(), draft.end());
      hooks.on_target_boundary(state, seq, true);
    }

    auto vr = leading_substring_verify(backend, draft, config.final_layer, y, state,
                                       config.policy, BonusRule::on_mismatch, &result.ledger,
                                       Phase::target_verify);
    std::vector<TokenId> commit = vr.accepted;
    if (vr.bonus) commit.push_back(*vr.bonus);
    stop = truncate_at_eos(commit, config.eos);
    const Index accepted =
        std::min<Index>(static_cast<Index>(vr.accepted.size()), static_cast<Index>(commit.size()));

    result.stats.draft_proposed += k;
    result.stats.target_proposed += k;
    result.stats.target_accepted += accepted;
    result.stats.flushed += k - accepted;
    result.trace.events.push_back(
        event::TargetVerify{c, buffer, vr.accepted, vr.bonus, k - accepted, "round"});

    y.insert(y.end(), commit.begin(), commit.end());
    committed += static_cast<Index>(commit.size());
    state.rollback(static_cast<Index>(y.size()));
    state.commit(static_cast<Index>(y.size()));
    result.trace.events.push_back(event::Commit{commit});
    if (hooks.on_target_boundary) hooks.on_target_boundary(state, y, false);
  }
  finish(backend, state, y, prompt, hooks, result);
  return result;
}

DecodeResult hispec_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                           const HiSpecConfig& config, const DecodeHooks& hooks) {
  config.validate();
  if (config.final_layer != backend.num_layers()) {
    throw ConfigError("L_f must equal the backend depth " + std::to_string(backend.num_layers()));
  }
  check_prompt(backend, prompt, config.max_new_tokens);

  DecodeResult result;
  result.trace = {Strategy::hispec, config.draft_layer, config.verify_layer, config.final_layer,
                  static_cast<Index>(prompt.size()), {}};
  LayeredState state = backend.make_state({config.draft_layer, config.verify_layer});
  prefill(backend, state, config.final_layer, prompt, result);

  std::vector<TokenId> y(prompt.begin(), prompt.end());
  TentativeBuffer buffer;
  Index committed = 0;
  bool stop = false;
  while (!stop && committed < config.max_new_tokens) {
    const Index remaining = config.max_new_tokens - committed;

    // Draft round on ctx* = y || B, then tentative verification at L_i.
    std::vector<TokenId> ctx = y;
    ctx.insert(ctx.end(), buffer.tokens.begin(), buffer.tokens.end());
    const auto m = static_cast<Index>(ctx.size());
    const Index k = std::min<Index>(config.draft_len, remaining - buffer.size());
    Index draft_reused = 0;
    auto draft = generate_next(backend, config.draft_layer, ctx, k, state, &result.ledger,
                               Phase::draft, &draft_reused);
    result.trace.events.push_back(event::Draft{m, draft, draft_reused});

    Index iv_reused = 0;
    auto iv = leading_substring_verify(backend, draft, config.verify_layer, ctx, state,
                                       config.policy, BonusRule::on_mismatch, &result.ledger,
                                       Phase::intermediate_verify, &iv_reused);
    for (TokenId t : iv.accepted) buffer.push(t, Provenance::draft_accepted);
    if (iv.bonus) buffer.push(*iv.bonus, Provenance::intermediate_bonus);
    result.stats.draft_proposed += k;
    result.stats.intermediate_accepted += static_cast<Index>(iv.accepted.size());
    result.trace.events.push_back(
        event::IntermediateVerify{m, k, iv.accepted, iv.bonus, iv_reused});

    const bool has_eos =
        config.eos &&
        std::find(buffer.tokens.begin(), buffer.tokens.end(), *config.eos) != buffer.tokens.end();
    std::string trigger;
    if (has_eos) {
      trigger = "eos";
    } else if (buffer.size() >= config.window) {
      trigger = "window";
    } else if (buffer.size() >= remaining) {
      trigger = "budget";
    } else {
      continue;
    }

    // Final-layer verification of the whole buffer in one pass.
    const auto c = static_cast<Index>(y.size());
    if (hooks.on_target_boundary) {
      std::vector<TokenId> seq = y;
      seq.insert(seq.end(), buffer.tokens.begin(), buffer.tokens.end());
      hooks.on_target_boundary(state, seq, true);
    }
    auto tv = leading_substring_verify(backend, buffer.tokens, config.final_layer, y, state,
                                       config.policy, BonusRule::on_mismatch, &result.ledger,
                                       Phase::target_verify);
    std::vector<TokenId> commit = tv.accepted;
    if (tv.bonus) commit.push_back(*tv.bonus);
    stop = truncate_at_eos(commit, config.eos);
    const Index b = buffer.size();
    const Index accepted =
        std::min<Index>(static_cast<Index>(tv.accepted.size()), static_cast<Index>(commit.size()));

    result.stats.target_proposed += b;
    result.stats.target_accepted += accepted;
    result.stats.flushed += b - accepted;
    result.trace.events.push_back(
        event::TargetVerify{c, buffer, tv.accepted, tv.bonus, b - accepted, trigger});

    y.insert(y.end(), commit.begin(), commit.end());
    committed += static_cast<Index>(commit.size());
    buffer.clear();
    state.rollback(static_cast<Index>(y.size()));
    state.commit(static_cast<Index>(y.size()));
    result.trace.events.push_back(event::Commit{commit});
    if (hooks.on_target_boundary) hooks.on_target_boundary(state, y, false);
  }
  finish(backend, state, y, prompt, hooks, result);
  return result;
}

}  // namespace hsd
