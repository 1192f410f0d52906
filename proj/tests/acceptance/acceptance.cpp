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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails. `--only N` (repeatable) selects
// criteria.
// All tolerances, sample counts and seeds are pinned below.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hsd/cost.hpp"
#include "hsd/decode.hpp"
#include "hsd/experiment.hpp"
#include "hsd/layered_state.hpp"
#include "hsd/synthetic.hpp"
#include "hsd/transformer.hpp"

#ifndef HSD_CLI_PATH
#error "HSD_CLI_PATH must name the hsd executable"
#endif
#ifndef HSD_REPRO_CONFIG
#error "HSD_REPRO_CONFIG must name the reproducibility config"
#endif

namespace hsd {
namespace {

// Criterion 1 and 2.
constexpr int kLosslessTriples = 1200;
constexpr std::uint64_t kLosslessSeed = 0x5eed0001;
// Criterion 3.
constexpr Real kWallRangeLow = 2.0;
constexpr Real kWallRangeHigh = 10.0;
constexpr Real kWallTolerance = 0.20;
// Criterion 4 and 6: relative margins on strict inequalities.
constexpr Index kStudyPrompts = 500;
constexpr Index kStudyNewTokens = 64;
constexpr std::uint64_t kStudySeed = 2026;
constexpr Real kUpliftMargin = 0.01;
constexpr Real kAblationMargin = 0.05;
// Criterion 5: golden argmax cell of the full L_f = 32 sweep.
constexpr Index kSweepPrompts = 500;
constexpr Index kSweepNewTokens = 64;
constexpr int kGoldenDraftLayer = 3;
constexpr int kGoldenVerifyLayer = 7;
// Criterion 7.
constexpr int kCalibrationSamples = 10000;
constexpr Real kCalibrationTolerance = 0.02;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

int worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

Real unit_draw(std::mt19937_64& rng) { return Real(rng() >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------------------
// 1 and 2: lossless decoding and state consistency over random triples.

struct Triple {
  std::unique_ptr<ModelBackend> backend;
  std::vector<TokenId> prompt;
  HiSpecConfig config;
};

Triple random_triple(std::mt19937_64& rng) {
  Triple t;
  const int n = 3 + static_cast<int>(rng() % 14);  // 3..16 layers
  if (rng() % 2 == 0) {
    ModelConfig m;
    m.n_layers = n;
    m.d_model = std::array{16, 32, 64}[rng() % 3];
    m.n_heads = m.d_model == 16 ? 2 : 4;
    m.vocab_size = 24 + static_cast<int>(rng() % 72);
    m.seed = rng();
    t.backend = std::make_unique<Transformer>(init_model(m));
  } else {
    SyntheticModelSpec s;
    s.n_layers = n;
    s.vocab_size = 8 + static_cast<int>(rng() % 248);
    s.seed = rng();
    s.context_window = 1 + static_cast<int>(rng() % 6);
    s.agreement = quarter_depth_profile(n, 0.05 + 0.9 * unit_draw(rng));
    t.backend = std::make_unique<SyntheticBackend>(s);
  }
  t.prompt.resize(1 + rng() % 16);
  for (auto& tok : t.prompt) {
    tok = static_cast<TokenId>(rng() % static_cast<unsigned>(t.backend->vocab_size()));
  }
  t.config.final_layer = n;
  t.config.draft_layer = 1 + static_cast<int>(rng() % static_cast<unsigned>(n - 2));
  t.config.verify_layer = t.config.draft_layer + 1 +
                          static_cast<int>(rng() % static_cast<unsigned>(n - 1 - t.config.draft_layer));
  t.config.draft_len = 1 + static_cast<int>(rng() % 6);
  t.config.window = 1 + static_cast<int>(rng() % 10);
  t.config.max_new_tokens = 1 + static_cast<Index>(rng() % 64);
  if (rng() % 4 == 0) t.config.eos = static_cast<TokenId>(rng() % 8);
  return t;
}

struct LosslessTally {
  int triples = 0;
  int transformer = 0;
  int mismatches = 0;
  Index boundaries = 0;
  Real max_diff = 0;
  Index occupant_mismatches = 0;
  Index recomputed = 0;
};

const LosslessTally& lossless_runs() {
  static const LosslessTally tally = [] {
    LosslessTally t;
    std::mt19937_64 rng(kLosslessSeed);
    for (int i = 0; i < kLosslessTriples; ++i) {
      const Triple c = random_triple(rng);
      if (dynamic_cast<const Transformer*>(c.backend.get())) ++t.transformer;
      DecodeHooks hooks;
      hooks.on_target_boundary = [&](const LayeredState& st, std::span<const TokenId> seq, bool) {
        ++t.boundaries;
        const auto report = consistency_check(st, *c.backend, seq);
        t.max_diff = std::max(t.max_diff, report.max_diff());
        t.occupant_mismatches += report.occupant_mismatches;
        for (int l = 1; l <= st.num_layers(); ++l) {
          for (Index p = 0; p < st.filled_len(l); ++p) {
            if (st.compute_count(l, p) != 1) ++t.recomputed;
          }
        }
      };
      const auto van = vanilla_decode(*c.backend, c.prompt, c.config.max_new_tokens,
                                      std::nullopt, c.config.eos);
      const auto hs = hispec_decode(*c.backend, c.prompt, c.config, hooks);
      if (hs.tokens != van.tokens) ++t.mismatches;
      ++t.triples;
    }
    return t;
  }();
  return tally;
}

Outcome criterion_lossless() {
  const auto& t = lossless_runs();
  return {t.triples >= 1000 && t.transformer > 0 && t.transformer < t.triples && t.mismatches == 0,
          fmt("%d triples (%d transformer), %d mismatches", t.triples, t.transformer,
              t.mismatches)};
}

Outcome criterion_consistency() {
  const auto& t = lossless_runs();
  return {t.boundaries > 0 && t.max_diff == 0 && t.occupant_mismatches == 0 && t.recomputed == 0,
          fmt("%lld boundaries, max diff %g, %lld occupant mismatches, %lld counts above 1",
              static_cast<long long>(t.boundaries), t.max_diff,
              static_cast<long long>(t.occupant_mismatches),
              static_cast<long long>(t.recomputed))};
}

// ---------------------------------------------------------------------------
// 3: verification wall structure.

Outcome criterion_wall() {
  bool ordered = true;
  for (int draft : {1, 4, 16, 24, 32}) {
    for (int target = draft + 1; target <= 160; ++target) {
      if (!(verification_wall_ratio(draft, target, 7) > verification_wall_ratio(draft, target - 1, 7))) {
        ordered = false;
      }
    }
  }
  Real lo = INFINITY, hi = 0;
  for (const auto& row : reference_wall_table()) {
    lo = std::min(lo, row.ratio);
    hi = std::max(hi, row.ratio);
  }
  const bool range = lo <= kWallRangeLow * (1 + kWallTolerance) &&
                     hi >= kWallRangeHigh * (1 - kWallTolerance);
  return {ordered && range,
          fmt("ordering %s; reference pairs span %.3fx to %.3fx, need <= %.1fx and >= %.1fx",
              ordered ? "exact" : "violated", lo, hi, kWallRangeLow * (1 + kWallTolerance),
              kWallRangeHigh * (1 - kWallTolerance))};
}

// ---------------------------------------------------------------------------
// 4, 5 and 6: cost-model studies on calibrated synthetic profiles.

ExperimentConfig study_config(SyntheticModelSpec spec, Index prompts, Index new_tokens) {
  ExperimentConfig c;
  c.backend.kind = BackendSpec::Kind::synthetic;
  c.backend.synthetic = std::move(spec);
  c.prompts.count = prompts;
  c.max_new_tokens = new_tokens;
  c.seed = kStudySeed;
  return c;
}

Outcome criterion_uplift() {
  RunOptions opts;
  opts.jobs = worker_count();
  bool pass = true;
  std::string detail;
  for (int lf : {32, 48}) {
    ExperimentConfig c = study_config(calibrate_preset("fig3-69", lf), kStudyPrompts, kStudyNewTokens);
    StrategySpec hispec;  // defaults: L_d = ceil(L_f/8), L_i = ceil(L_f/4), N_d = 2, N_i = 4
    StrategySpec selfspec;
    selfspec.kind = Strategy::selfspec;
    selfspec.draft_layer = GridAxis{true, {}};
    c.strategies = {hispec, selfspec};
    const auto table = run_sweep(c, opts);

    const ResultRow* hs = nullptr;
    const ResultRow* best_ss = nullptr;
    const ResultRow* same_ss = nullptr;
    for (const auto& r : table.rows) {
      if (r.point.kind == Strategy::hispec) hs = &r;
    }
    for (const auto& r : table.rows) {
      if (r.point.kind != Strategy::selfspec) continue;
      if (!best_ss || r.rel_throughput > best_ss->rel_throughput) best_ss = &r;
      if (hs && r.point.draft_layer == hs->point.draft_layer) same_ss = &r;
    }
    if (!hs || !best_ss || !same_ss) return {false, "missing rows"};
    const bool ok = hs->rel_throughput > 1 + kUpliftMargin &&
                    hs->rel_throughput > best_ss->rel_throughput * (1 + kUpliftMargin) &&
                    hs->acc_rate_target > same_ss->acc_rate_target * (1 + kUpliftMargin);
    pass = pass && ok;
    detail += fmt("%sL_f=%d hispec(%d,%d) %.4fx vs best selfspec(L_d=%d) %.4fx; "
                  "target acceptance %.4f vs %.4f",
                  detail.empty() ? "" : " | ", lf, hs->point.draft_layer, hs->point.verify_layer,
                  hs->rel_throughput, best_ss->point.draft_layer, best_ss->rel_throughput,
                  hs->acc_rate_target, same_ss->acc_rate_target);
  }
  return {pass, detail};
}

Outcome criterion_interior() {
  RunOptions opts;
  opts.jobs = worker_count();
  ExperimentConfig c = study_config(calibrate_preset("fig3-69", 32), kSweepPrompts, kSweepNewTokens);
  StrategySpec grid;
  grid.draft_layer = GridAxis{true, {}};
  grid.verify_layer = GridAxis{true, {}};
  c.strategies = {grid};
  const auto table = run_sweep(c, opts);
  const ResultRow* best = nullptr;
  Index cells = 0;
  for (const auto& r : table.rows) {
    if (r.point.kind != Strategy::hispec) continue;
    ++cells;
    if (!best || r.rel_throughput > best->rel_throughput) best = &r;
  }
  if (!best) return {false, "empty sweep"};
  const int ld = best->point.draft_layer, li = best->point.verify_layer, lf = best->point.final_layer;
  const bool interior = ld > 1 && ld + 1 < li && li < lf - 1;
  const bool golden = ld == kGoldenDraftLayer && li == kGoldenVerifyLayer;
  return {cells == 465 && interior && golden,
          fmt("%lld cells, argmax (L_d=%d, L_i=%d) at %.4fx, %s; golden (%d, %d) %s",
              static_cast<long long>(cells), ld, li, best->rel_throughput,
              interior ? "interior" : "on the boundary", kGoldenDraftLayer, kGoldenVerifyLayer,
              golden ? "matches" : "differs")};
}

Outcome criterion_ablation() {
  RunOptions opts;
  opts.jobs = worker_count();
  SyntheticModelSpec spec;
  spec.n_layers = 32;
  spec.vocab_size = 256;
  spec.seed = 6;
  spec.agreement = quarter_depth_profile(32, 0.6);
  const ExperimentConfig c = study_config(spec, kStudyPrompts, kStudyNewTokens);

  auto throughput = [&](AblationParam param, int value) {
    const auto table = run_ablation(c, param, {value}, opts);
    for (const auto& r : table.rows) {
      if (r.point.kind == Strategy::hispec) return r.rel_throughput;
    }
    return Real(NAN);
  };
  const Real nd2 = throughput(AblationParam::draft_len, 2);
  const Real nd8 = throughput(AblationParam::draft_len, 8);
  const Real ni4 = throughput(AblationParam::window, 4);
  const Real ni16 = throughput(AblationParam::window, 16);
  const bool pass = nd2 >= nd8 * (1 + kAblationMargin) && ni4 >= ni16 * (1 + kAblationMargin);
  return {pass, fmt("alpha(L_i=8)=%.3f; N_d=2 %.4fx vs N_d=8 %.4fx (%+.1f%%); "
                    "N_i=4 %.4fx vs N_i=16 %.4fx (%+.1f%%)",
                    spec.alpha(8), nd2, nd8, 100 * (nd2 / nd8 - 1), ni4, ni16,
                    100 * (ni4 / ni16 - 1))};
}

// ---------------------------------------------------------------------------
// 7: Monte-Carlo calibration of the synthetic backend.

Outcome criterion_calibration() {
  Real worst = 0;
  int worst_layer = 0;
  std::string worst_preset;
  std::vector<Real> anchors_seen;
  for (const std::string preset : {"fig3-69", "llama70b-sharegpt"}) {
    const SyntheticModelSpec spec = calibrate_preset(preset);
    std::mt19937_64 rng(kStudySeed ^ std::hash<std::string>{}(preset));
    std::vector<std::vector<TokenId>> contexts(kCalibrationSamples);
    for (auto& ctx : contexts) {
      ctx.resize(static_cast<std::size_t>(spec.context_window));
      for (auto& tok : ctx) tok = static_cast<TokenId>(rng() % static_cast<unsigned>(spec.vocab_size));
    }
    std::vector<TokenId> targets;
    targets.reserve(contexts.size());
    for (const auto& ctx : contexts) {
      targets.push_back(greedy_token(synth_predict(spec, spec.n_layers, ctx)));
    }
    for (int layer = 1; layer <= spec.n_layers; ++layer) {
      int agree = 0;
      for (std::size_t i = 0; i < contexts.size(); ++i) {
        agree += greedy_token(synth_predict(spec, layer, contexts[i])) == targets[i];
      }
      const Real err = std::abs(Real(agree) / kCalibrationSamples - spec.alpha(layer));
      if (err > worst) {
        worst = err;
        worst_layer = layer;
        worst_preset = preset;
      }
      for (Real a : {0.69, 0.397, 0.581}) {
        if (std::abs(spec.alpha(layer) - a) < 1e-12) anchors_seen.push_back(a);
      }
    }
  }
  std::sort(anchors_seen.begin(), anchors_seen.end());
  anchors_seen.erase(std::unique(anchors_seen.begin(), anchors_seen.end()), anchors_seen.end());
  const bool pass = worst <= kCalibrationTolerance && anchors_seen.size() == 3;
  return {pass, fmt("%d samples per layer; worst |error| %.4f (%s layer %d); "
                    "%zu of 3 anchor values configured",
                    kCalibrationSamples, worst, worst_preset.c_str(), worst_layer,
                    anchors_seen.size())};
}

// ---------------------------------------------------------------------------
// 8: byte-identical CLI reports.

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_reproducible() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() /
                        ("hsd_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(root);
  struct Job {
    std::string args;
    std::string file;
  };
  const std::vector<Job> jobs = {
      {"sweep", "sweep.csv"},
      {"ablate --param N_d --values 1,2,4,8", "ablate_N_d.csv"},
      {"ablate --param N_i --values 2,4,8,16", "ablate_N_i.csv"},
      {"compare", "compare.csv"},
      {"sweep --format jsonl", "sweep.jsonl"},
  };
  int identical = 0;
  std::string failure;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    std::vector<std::string> contents;
    for (const auto& [run, threads] : {std::pair{"a", 1}, {"b", 1}, {"c", 8}}) {
      const fs::path out = root / std::to_string(j) / run;
      const std::string cmd = std::string("\"") + HSD_CLI_PATH + "\" " + jobs[j].args +
                              " --config \"" + HSD_REPRO_CONFIG + "\" --seed 11 --jobs " +
                              std::to_string(threads) + " --out \"" + out.string() + "\"";
      if (std::system(cmd.c_str()) != 0) {
        failure = "command failed: " + cmd;
        break;
      }
      contents.push_back(slurp(out / jobs[j].file));
    }
    if (contents.size() == 3 && !contents[0].empty() && contents[0] == contents[1] &&
        contents[0] == contents[2]) {
      ++identical;
    } else if (failure.empty()) {
      failure = "reports differ for '" + jobs[j].args + "'";
    }
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  const bool pass = identical == static_cast<int>(jobs.size());
  return {pass, fmt("%d of %zu reports byte-identical across two runs and --jobs 1 vs 8%s%s",
                    identical, jobs.size(), failure.empty() ? "" : "; ", failure.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace hsd

int main(int argc, char** argv) {
  using namespace hsd;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only.push_back(std::atoi(argv[++i]));
  }
  const std::vector<Criterion> criteria = {
      {1, "lossless decoding", criterion_lossless},
      {2, "state consistency", criterion_consistency},
      {3, "verification wall structure", criterion_wall},
      {4, "throughput uplift", criterion_uplift},
      {5, "interior optimum", criterion_interior},
      {6, "ablation direction", criterion_ablation},
      {7, "synthetic calibration", criterion_calibration},
      {8, "reproducibility", criterion_reproducible},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
