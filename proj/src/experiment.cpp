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

#include "hsd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"

namespace hsd {

using nlohmann::json;

// ---------------------------------------------------------------- backend

int BackendSpec::num_layers() const {
  return kind == Kind::transformer ? model.n_layers : synthetic.n_layers;
}

int BackendSpec::vocab_size() const {
  return kind == Kind::transformer ? model.vocab_size : synthetic.vocab_size;
}

std::unique_ptr<ModelBackend> BackendSpec::build() const {
  if (kind == Kind::transformer) return std::make_unique<Transformer>(init_model(model));
  return std::make_unique<SyntheticBackend>(synthetic);
}

// ----------------------------------------------------------------- config

namespace {

int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Best-effort location of a key for semantic errors: its first occurrence.
std::string where(std::string_view text, std::string_view source, std::string_view key) {
  const std::string quoted = "\"" + std::string(key) + "\"";
  const auto pos = text.find(quoted);
  std::string loc(source);
  if (pos != std::string_view::npos) loc += ":" + std::to_string(line_of_offset(text, pos));
  return loc;
}

class ConfigReader {
 public:
  ConfigReader(std::string_view text, std::string_view source) : text_(text), source_(source) {}

  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    throw ConfigError(where(text_, source_, key) + ": '" + std::string(key) + "': " + what);
  }

  void only_keys(const json& obj, std::string_view section,
                 std::initializer_list<std::string_view> allowed) const {
    if (!obj.is_object()) fail(section, "expected an object");
    for (const auto& [k, v] : obj.items()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        fail(k, "unknown key in " + std::string(section));
      }
    }
  }

  long long integer(const json& obj, std::string_view key, long long fallback) const {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(std::string(key));
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<long long>();
  }

  std::uint64_t u64(const json& obj, std::string_view key, std::uint64_t fallback) const {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(std::string(key));
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::uint64_t>();
    fail(key, "expected a non-negative integer");
  }

  Real real(const json& v, std::string_view key) const {
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<Real>();
  }

  std::string string(const json& obj, std::string_view key, std::string fallback) const {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(std::string(key));
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  GridAxis axis(const json& v, std::string_view key, bool allow_all) const {
    GridAxis a;
    if (v.is_number_integer()) {
      a.values = {v.get<int>()};
    } else if (v.is_array()) {
      for (const auto& e : v) {
        if (!e.is_number_integer()) fail(key, "list entries must be integers");
        a.values.push_back(e.get<int>());
      }
    } else if (v.is_string() && v.get<std::string>() == "all") {
      if (!allow_all) fail(key, "\"all\" only applies to layer axes");
      a.all = true;
    } else if (v.is_object()) {
      only_keys(v, key, {"from", "to", "step"});
      const long long from = integer(v, "from", 1);
      if (!v.contains("to")) fail(key, "range needs \"to\"");
      const long long to = integer(v, "to", 0);
      const long long step = integer(v, "step", 1);
      if (step < 1) fail(key, "step must be >= 1");
      for (long long x = from; x <= to; x += step) a.values.push_back(static_cast<int>(x));
    } else {
      fail(key, "expected an integer, a list, \"all\" or {\"from\", \"to\"}");
    }
    return a;
  }

  AcceptancePolicy policy(const json& v) const {
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "greedy") return AcceptancePolicy::greedy();
      if (s.rfind("top", 0) == 0) {
        try {
          return AcceptancePolicy::top(std::stoi(s.substr(3)));
        } catch (const std::exception&) {
        }
      }
    } else if (v.is_object() && v.contains("top_k")) {
      return AcceptancePolicy::top(static_cast<int>(integer(v, "top_k", 1)));
    }
    fail("policy", "expected \"greedy\", \"topK\" or {\"top_k\": K}");
  }

  BackendSpec backend(const json& b) const {
    BackendSpec spec;
    const auto type = string(b, "type", "synthetic");
    if (type == "transformer") {
      only_keys(b, "backend", {"type", "n_layers", "d_model", "n_heads", "vocab_size",
                               "max_seq_len", "seed"});
      spec.kind = BackendSpec::Kind::transformer;
      auto& m = spec.model;
      m.n_layers = static_cast<int>(integer(b, "n_layers", m.n_layers));
      m.d_model = static_cast<int>(integer(b, "d_model", m.d_model));
      m.n_heads = static_cast<int>(integer(b, "n_heads", m.n_heads));
      m.vocab_size = static_cast<int>(integer(b, "vocab_size", m.vocab_size));
      m.max_seq_len = integer(b, "max_seq_len", m.max_seq_len);
      m.seed = u64(b, "seed", m.seed);
      try {
        m.validate();
      } catch (const ConfigError& e) {
        fail("backend", e.what());
      }
      return spec;
    }
    if (type != "synthetic") fail("type", "backend type must be \"synthetic\" or \"transformer\"");
    only_keys(b, "backend", {"type", "preset", "n_layers", "vocab_size", "seed", "context_window",
                             "max_seq_len", "quarter_alpha", "anchors", "agreement"});
    spec.kind = BackendSpec::Kind::synthetic;
    std::optional<int> n_layers;
    if (b.contains("n_layers")) n_layers = static_cast<int>(integer(b, "n_layers", 0));
    auto& s = spec.synthetic;
    try {
      const int n = n_layers.value_or(32);
      if (b.contains("agreement")) {
        const auto& a = b.at("agreement");
        if (!a.is_array()) fail("agreement", "expected a list of numbers");
        s.agreement.clear();
        for (const auto& x : a) s.agreement.push_back(real(x, "agreement"));
        s.n_layers = n_layers.value_or(static_cast<int>(s.agreement.size()));
      } else if (b.contains("anchors")) {
        const auto& a = b.at("anchors");
        if (!a.is_object()) fail("anchors", "expected {\"layer\": alpha, ...}");
        std::map<int, Real> anchors;
        for (const auto& [k, v] : a.items()) {
          int layer = 0;
          try {
            layer = std::stoi(k);
          } catch (const std::exception&) {
            fail("anchors", "layer keys must be integers");
          }
          anchors[layer] = real(v, "anchors");
        }
        s.n_layers = n;
        s.agreement = interpolate_profile(n, anchors);
      } else if (b.contains("quarter_alpha")) {
        s.n_layers = n;
        s.agreement = quarter_depth_profile(n, real(b.at("quarter_alpha"), "quarter_alpha"));
      } else {
        s = calibrate_preset(string(b, "preset", "fig3-69"), n_layers);
      }
      s.vocab_size = static_cast<int>(integer(b, "vocab_size", s.vocab_size));
      s.seed = u64(b, "seed", s.seed);
      s.context_window = static_cast<int>(integer(b, "context_window", s.context_window));
      s.max_seq_len = integer(b, "max_seq_len", s.max_seq_len);
      s.validate();
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.rfind(std::string(source_), 0) == 0) throw;
      fail("backend", msg);
    }
    return spec;
  }

  StrategySpec strategy(const json& s) const {
    only_keys(s, "strategy", {"kind", "L_d", "L_i", "N_d", "N_i", "policy"});
    StrategySpec spec;
    const auto kind = string(s, "kind", "hispec");
    if (kind == "vanilla") {
      spec.kind = Strategy::vanilla;
    } else if (kind == "selfspec") {
      spec.kind = Strategy::selfspec;
    } else if (kind == "hispec") {
      spec.kind = Strategy::hispec;
    } else {
      fail("kind", "unknown strategy '" + kind + "' (vanilla, selfspec, hispec)");
    }
    if (s.contains("L_d")) spec.draft_layer = axis(s.at("L_d"), "L_d", true);
    if (s.contains("L_i")) spec.verify_layer = axis(s.at("L_i"), "L_i", true);
    if (s.contains("N_d")) spec.draft_len = axis(s.at("N_d"), "N_d", false);
    if (s.contains("N_i")) spec.window = axis(s.at("N_i"), "N_i", false);
    if (s.contains("policy")) spec.policy = policy(s.at("policy"));
    return spec;
  }

 private:
  std::string_view text_;
  std::string_view source_;
};

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto offset = e.byte == 0 ? 0 : e.byte - 1;
    throw ConfigError(std::string(source) + ":" + std::to_string(line_of_offset(text, offset)) +
                      ": parse error: " + e.what());
  }
  ConfigReader r(text, source);
  r.only_keys(root, "config",
              {"seed", "backend", "prompts", "max_new_tokens", "eos", "strategies", "ablation"});

  ExperimentConfig c;
  c.seed = r.u64(root, "seed", c.seed);
  if (root.contains("backend")) c.backend = r.backend(root.at("backend"));
  else c.backend.synthetic = calibrate_preset("fig3-69");

  if (root.contains("prompts")) {
    const auto& p = root.at("prompts");
    r.only_keys(p, "prompts", {"count", "min_len", "max_len", "text_file"});
    c.prompts.count = r.integer(p, "count", c.prompts.count);
    c.prompts.min_len = r.integer(p, "min_len", c.prompts.min_len);
    c.prompts.max_len = r.integer(p, "max_len", std::max(c.prompts.max_len, c.prompts.min_len));
    c.prompts.text_file = r.string(p, "text_file", "");
    if (c.prompts.count < 0) r.fail("count", "must be >= 0");
    if (c.prompts.min_len < 1) r.fail("min_len", "must be >= 1");
    if (c.prompts.max_len < c.prompts.min_len) r.fail("max_len", "must be >= min_len");
  }
  c.max_new_tokens = r.integer(root, "max_new_tokens", c.max_new_tokens);
  if (c.max_new_tokens < 1) r.fail("max_new_tokens", "must be >= 1");
  if (root.contains("eos") && !root.at("eos").is_null()) {
    const auto eos = r.integer(root, "eos", 0);
    if (eos < 0 || eos >= c.backend.vocab_size()) r.fail("eos", "outside the vocabulary");
    c.eos = static_cast<TokenId>(eos);
  }
  if (root.contains("strategies")) {
    const auto& list = root.at("strategies");
    if (!list.is_array()) r.fail("strategies", "expected a list");
    for (const auto& s : list) c.strategies.push_back(r.strategy(s));
  }
  if (root.contains("ablation")) {
    const auto& a = root.at("ablation");
    r.only_keys(a, "ablation", {"parameter", "values"});
    const auto param = r.string(a, "parameter", "");
    if (param == "N_d") c.ablation_param = AblationParam::draft_len;
    else if (param == "N_i") c.ablation_param = AblationParam::window;
    else r.fail("parameter", "must be \"N_d\" or \"N_i\"");
    if (a.contains("values")) c.ablation_values = r.axis(a.at("values"), "values", false).values;
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

// ---------------------------------------------------------------- prompts

std::vector<TokenId> tokenize_bytes(std::string_view text, int vocab_size) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char ch : text) out.push_back(static_cast<TokenId>(ch % vocab_size));
  return out;
}

std::vector<std::vector<TokenId>> make_prompts(const ExperimentConfig& config) {
  const int vocab = config.backend.vocab_size();
  std::vector<std::vector<TokenId>> prompts;
  if (!config.prompts.text_file.empty()) {
    std::ifstream in(config.prompts.text_file, std::ios::binary);
    if (!in) throw ConfigError("cannot read prompt file '" + config.prompts.text_file + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) prompts.push_back(tokenize_bytes(line, vocab));
    }
    return prompts;
  }
  // Raw engine words keep prompts identical across standard libraries.
  std::mt19937_64 rng(config.seed);
  const auto span = static_cast<std::uint64_t>(config.prompts.max_len - config.prompts.min_len + 1);
  for (Index i = 0; i < config.prompts.count; ++i) {
    const auto len = config.prompts.min_len + static_cast<Index>(rng() % span);
    std::vector<TokenId> p(static_cast<std::size_t>(len));
    for (auto& t : p) t = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
    prompts.push_back(std::move(p));
  }
  return prompts;
}

// ------------------------------------------------------------------- grid

std::string GridPoint::label() const {
  const auto name = strategy_name(kind);
  return policy.lossless() || kind == Strategy::vanilla ? name : name + ":" + policy.name();
}

namespace {

auto sort_key(const GridPoint& p) {
  return std::make_tuple(static_cast<int>(p.kind), p.draft_layer, p.verify_layer, p.draft_len,
                         p.window, static_cast<int>(p.policy.mode), p.policy.k);
}

bool same_point(const GridPoint& a, const GridPoint& b) {
  return sort_key(a) == sort_key(b) && a.final_layer == b.final_layer;
}

std::vector<int> axis_values(const std::optional<GridAxis>& axis, int lo, int hi,
                             std::vector<int> fallback) {
  if (!axis) return fallback;
  if (!axis->all) return axis->values;
  std::vector<int> out;
  for (int v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

std::string check_point(const GridPoint& p) {
  try {
    if (p.kind == Strategy::hispec) {
      HiSpecConfig c{p.draft_layer, p.verify_layer, p.final_layer, p.draft_len, p.window,
                     p.policy, 1, std::nullopt};
      c.validate();
    } else if (p.kind == Strategy::selfspec) {
      SelfSpecConfig c{p.draft_layer, p.final_layer, p.draft_len, p.policy, 1, std::nullopt};
      c.validate();
    }
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

std::vector<GridPoint> expand_grid(const StrategySpec& spec, int n_layers,
                                   std::vector<Skipped>* skipped) {
  const auto defaults = HiSpecConfig::defaults(n_layers);
  std::vector<GridPoint> points;
  auto add = [&](GridPoint p) {
    const auto reason = check_point(p);
    if (reason.empty()) {
      points.push_back(p);
    } else if (skipped) {
      skipped->push_back({p, reason});
    }
  };

  GridPoint base;
  base.kind = spec.kind;
  base.final_layer = n_layers;
  base.policy = spec.policy;
  if (spec.kind == Strategy::vanilla) {
    base.policy = AcceptancePolicy::greedy();
    add(base);
    return points;
  }

  const int ld_max = spec.kind == Strategy::hispec ? n_layers - 2 : n_layers - 1;
  const auto lds = axis_values(spec.draft_layer, 1, ld_max, {defaults.draft_layer});
  const auto nds = axis_values(spec.draft_len, 1, 1, {defaults.draft_len});
  for (int ld : lds) {
    std::vector<int> lis = {0};
    if (spec.kind == Strategy::hispec) {
      const int li_default = std::max((n_layers + 3) / 4, ld + 1);
      lis = axis_values(spec.verify_layer, ld + 1, n_layers - 1, {li_default});
    }
    for (int li : lis) {
      for (int nd : nds) {
        std::vector<int> nis = {0};
        if (spec.kind == Strategy::hispec) nis = axis_values(spec.window, 1, 1, {defaults.window});
        for (int ni : nis) {
          GridPoint p = base;
          p.draft_layer = ld;
          p.verify_layer = li;
          p.draft_len = nd;
          p.window = ni;
          add(p);
        }
      }
    }
  }
  std::sort(points.begin(), points.end(),
            [](const GridPoint& a, const GridPoint& b) { return sort_key(a) < sort_key(b); });
  points.erase(std::unique(points.begin(), points.end(), same_point), points.end());
  return points;
}

// -------------------------------------------------------------------- run

namespace {

struct Aggregate {
  Index prompts = 0;
  CostLedger ledger;
  DecodeStats stats;
};

Aggregate run_point(const ModelBackend& backend, const GridPoint& p,
                    const std::vector<std::vector<TokenId>>& prompts, const ExperimentConfig& c) {
  Aggregate agg;
  for (const auto& prompt : prompts) {
    DecodeResult r;
    switch (p.kind) {
      case Strategy::vanilla:
        r = vanilla_decode(backend, prompt, c.max_new_tokens, std::nullopt, c.eos);
        break;
      case Strategy::selfspec:
        r = selfspec_decode(backend, prompt,
                            {p.draft_layer, p.final_layer, p.draft_len, p.policy, c.max_new_tokens,
                             c.eos});
        break;
      case Strategy::hispec:
        r = hispec_decode(backend, prompt,
                          {p.draft_layer, p.verify_layer, p.final_layer, p.draft_len, p.window,
                           p.policy, c.max_new_tokens, c.eos});
        break;
    }
    ++agg.prompts;
    agg.ledger += r.ledger;
    agg.stats += r.stats;
  }
  return agg;
}

Real ratio_or_nan(Index num, Index den) {
  return den == 0 ? std::numeric_limits<Real>::quiet_NaN() : Real(num) / Real(den);
}

// Runs task(i) for i in [0, n) on `jobs` threads. Results land by index, so
// scheduling never changes the output; the lowest-index failure is rethrown.
template <typename T, typename F>
std::vector<T> parallel_map(std::size_t n, int jobs, F task) {
  std::vector<T> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto extra = static_cast<std::size_t>(std::max(jobs, 1)) - 1;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(extra, n); ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace

ResultTable run_points(const ExperimentConfig& config, const std::vector<GridPoint>& points,
                       const RunOptions& options) {
  ResultTable table;
  if (points.empty()) return table;
  const auto backend = config.backend.build();
  const auto prompts = make_prompts(config);
  const int n = backend->num_layers();

  GridPoint baseline;
  baseline.kind = Strategy::vanilla;
  baseline.final_layer = n;
  std::vector<GridPoint> tasks = {baseline};
  tasks.insert(tasks.end(), points.begin(), points.end());
  auto results = parallel_map<Aggregate>(tasks.size(), options.jobs, [&](std::size_t i) {
    if (i > 0 && tasks[i].kind == Strategy::vanilla) return Aggregate{};
    return run_point(*backend, tasks[i], prompts, config);
  });
  const Aggregate& base = results[0];

  for (std::size_t i = 1; i < tasks.size(); ++i) {
    const Aggregate& a = tasks[i].kind == Strategy::vanilla ? base : results[i];
    ResultRow row;
    row.point = tasks[i];
    row.prompts = a.prompts;
    row.committed_tokens = a.stats.committed;
    row.seq_units = a.ledger.sequential_units();
    row.pos_layer_units = a.ledger.position_layer_units();
    row.acc_rate_intermediate =
        tasks[i].kind == Strategy::hispec
            ? ratio_or_nan(a.stats.intermediate_accepted, a.stats.draft_proposed)
            : std::numeric_limits<Real>::quiet_NaN();
    row.acc_rate_target = ratio_or_nan(a.stats.target_accepted, a.stats.target_proposed);
    row.flushed = a.stats.flushed;
    try {
      row.rel_throughput =
          relative_throughput(a.stats.committed, a.ledger, base.stats.committed, base.ledger);
    } catch (const UndefinedRatioError&) {
      row.rel_throughput = std::numeric_limits<Real>::quiet_NaN();
    }
    table.rows.push_back(row);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return sort_key(a.point) < sort_key(b.point);
  });
  return table;
}

namespace {

void log_skipped(const std::vector<Skipped>& skipped, const RunOptions& options) {
  if (!options.log) return;
  for (const auto& s : skipped) {
    *options.log << "warning: skipping " << s.point.label() << " L_d=" << s.point.draft_layer
                 << " L_i=" << s.point.verify_layer << " N_d=" << s.point.draft_len
                 << " N_i=" << s.point.window << ": " << s.reason << '\n';
  }
}

std::vector<GridPoint> expand_all(const std::vector<StrategySpec>& specs, int n_layers,
                                  std::vector<Skipped>& skipped) {
  std::vector<GridPoint> points;
  for (const auto& s : specs) {
    auto p = expand_grid(s, n_layers, &skipped);
    points.insert(points.end(), p.begin(), p.end());
  }
  std::sort(points.begin(), points.end(),
            [](const GridPoint& a, const GridPoint& b) { return sort_key(a) < sort_key(b); });
  points.erase(std::unique(points.begin(), points.end(), same_point), points.end());
  return points;
}

ResultTable run_specs(const ExperimentConfig& config, const std::vector<StrategySpec>& specs,
                      const RunOptions& options) {
  std::vector<Skipped> skipped;
  const auto points = expand_all(specs, config.backend.num_layers(), skipped);
  log_skipped(skipped, options);
  auto table = run_points(config, points, options);
  table.skipped = std::move(skipped);
  return table;
}

}  // namespace

ResultTable run_sweep(const ExperimentConfig& config, const RunOptions& options) {
  auto specs = config.strategies;
  if (specs.empty()) specs.push_back(StrategySpec{});
  return run_specs(config, specs, options);
}

ResultTable run_ablation(const ExperimentConfig& config, AblationParam param,
                         const std::vector<int>& values, const RunOptions& options) {
  const int n = config.backend.num_layers();
  GridPoint base;
  bool found = false;
  for (const auto& s : config.strategies) {
    if (s.kind != Strategy::hispec) continue;
    auto pts = expand_grid(s, n, nullptr);
    if (!pts.empty()) {
      base = pts.front();
      found = true;
      break;
    }
  }
  if (!found) base = expand_grid(StrategySpec{}, n, nullptr).at(0);

  std::vector<GridPoint> points;
  std::vector<Skipped> skipped;
  for (int v : values) {
    GridPoint p = base;
    (param == AblationParam::draft_len ? p.draft_len : p.window) = v;
    const auto reason = check_point(p);
    if (reason.empty()) points.push_back(p);
    else skipped.push_back({p, reason});
  }
  log_skipped(skipped, options);
  std::sort(points.begin(), points.end(),
            [](const GridPoint& a, const GridPoint& b) { return sort_key(a) < sort_key(b); });
  points.erase(std::unique(points.begin(), points.end(), same_point), points.end());
  auto table = run_points(config, points, options);
  table.skipped = std::move(skipped);
  return table;
}

ResultTable run_compare(const ExperimentConfig& config, const RunOptions& options) {
  std::vector<StrategySpec> specs = config.strategies;
  if (specs.empty()) {
    specs.push_back(StrategySpec{Strategy::selfspec, {}, {}, {}, {}, {}});
    specs.push_back(StrategySpec{Strategy::hispec, {}, {}, {}, {}, {}});
  }
  specs.push_back(StrategySpec{Strategy::vanilla, {}, {}, {}, {}, {}});
  return run_specs(config, specs, options);
}

// ---------------------------------------------------------------- reports

std::string format_real(Real v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {

json json_real(Real v) {
  if (std::isnan(v)) return nullptr;
  return std::round(v * 1e6) / 1e6;
}

}  // namespace

void emit_report(const ResultTable& table, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::csv) {
    out << kCsvHeader << '\n';
    for (const auto& r : table.rows) {
      const auto& p = r.point;
      out << p.label() << ',' << p.draft_layer << ',' << p.verify_layer << ',' << p.final_layer
          << ',' << p.draft_len << ',' << p.window << ',' << r.prompts << ','
          << r.committed_tokens << ',' << r.seq_units << ',' << r.pos_layer_units << ','
          << format_real(r.acc_rate_intermediate) << ',' << format_real(r.acc_rate_target) << ','
          << r.flushed << ',' << format_real(r.rel_throughput) << '\n';
    }
    return;
  }
  for (const auto& r : table.rows) {
    const auto& p = r.point;
    nlohmann::ordered_json j;
    j["strategy"] = p.label();
    j["L_d"] = p.draft_layer;
    j["L_i"] = p.verify_layer;
    j["L_f"] = p.final_layer;
    j["N_d"] = p.draft_len;
    j["N_i"] = p.window;
    j["prompts"] = r.prompts;
    j["committed_tokens"] = r.committed_tokens;
    j["seq_units"] = r.seq_units;
    j["pos_layer_units"] = r.pos_layer_units;
    j["acc_rate_intermediate"] = json_real(r.acc_rate_intermediate);
    j["acc_rate_target"] = json_real(r.acc_rate_target);
    j["flushed"] = r.flushed;
    j["rel_throughput"] = json_real(r.rel_throughput);
    out << j.dump() << '\n';
  }
}

void write_report(const ResultTable& table, ReportFormat format, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write report '" + path + "'");
  emit_report(table, format, out);
  out.flush();
  if (!out) throw Error("error writing report '" + path + "'");
}

std::vector<ResultRow> parse_csv_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw ConfigError("not a report CSV: header mismatch");
  }
  std::vector<ResultRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 14) {
      throw ConfigError("report line " + std::to_string(line_no) + ": expected 14 fields");
    }
    try {
      ResultRow r;
      auto& p = r.point;
      const auto colon = f[0].find(':');
      const auto name = f[0].substr(0, colon);
      if (name == "vanilla") p.kind = Strategy::vanilla;
      else if (name == "selfspec") p.kind = Strategy::selfspec;
      else if (name == "hispec") p.kind = Strategy::hispec;
      else throw ConfigError("unknown strategy '" + name + "'");
      if (colon != std::string::npos) p.policy = AcceptancePolicy::top(std::stoi(f[0].substr(colon + 4)));
      p.draft_layer = std::stoi(f[1]);
      p.verify_layer = std::stoi(f[2]);
      p.final_layer = std::stoi(f[3]);
      p.draft_len = std::stoi(f[4]);
      p.window = std::stoi(f[5]);
      r.prompts = std::stoll(f[6]);
      r.committed_tokens = std::stoll(f[7]);
      r.seq_units = std::stoll(f[8]);
      r.pos_layer_units = std::stoll(f[9]);
      r.acc_rate_intermediate = std::stod(f[10]);
      r.acc_rate_target = std::stod(f[11]);
      r.flushed = std::stoll(f[12]);
      r.rel_throughput = std::stod(f[13]);
      rows.push_back(r);
    } catch (const ConfigError& e) {
      throw ConfigError("report line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw ConfigError("report line " + std::to_string(line_no) + ": malformed field");
    }
  }
  return rows;
}

void emit_heatmap(const std::vector<ResultRow>& rows, std::ostream& out) {
  int n = 0;
  for (const auto& r : rows) {
    if (r.point.kind == Strategy::hispec) n = std::max(n, r.point.final_layer);
  }
  out << "# rel_throughput; rows L_d, columns L_i, nan = no valid run\n";
  if (n < 3) return;
  const Real nan = std::numeric_limits<Real>::quiet_NaN();
  std::vector<std::vector<Real>> cell(static_cast<std::size_t>(n),
                                      std::vector<Real>(static_cast<std::size_t>(n), nan));
  for (const auto& r : rows) {
    const auto& p = r.point;
    if (p.kind != Strategy::hispec || p.final_layer != n) continue;
    if (p.draft_layer < 1 || p.draft_layer > n - 2 || p.verify_layer < 2 || p.verify_layer > n - 1) {
      continue;
    }
    auto& v = cell[static_cast<std::size_t>(p.draft_layer)][static_cast<std::size_t>(p.verify_layer)];
    if (std::isnan(v)) v = r.rel_throughput;  // first row in sorted order wins
  }
  // gnuplot "nonuniform matrix" layout.
  out << (n - 2);
  for (int li = 2; li <= n - 1; ++li) out << ' ' << li;
  out << '\n';
  for (int ld = 1; ld <= n - 2; ++ld) {
    out << ld;
    for (int li = 2; li <= n - 1; ++li) {
      out << ' ' << format_real(cell[static_cast<std::size_t>(ld)][static_cast<std::size_t>(li)]);
    }
    out << '\n';
  }
}

void emit_wall(Index positions_per_verify, std::ostream& out) {
  out << "target,target_layers,draft,draft_layers,ratio,measured_ratio\n";
  for (const auto& w : reference_wall_table(positions_per_verify)) {
    out << w.target << ',' << w.target_layers << ',' << w.draft << ',' << w.draft_layers << ','
        << format_real(w.ratio) << ',' << format_real(w.measured_ratio) << '\n';
  }
}

// ------------------------------------------------------------------ check

CheckSummary run_check(const ExperimentConfig& config) {
  const auto backend = config.backend.build();
  const auto prompts = make_prompts(config);
  const int n = backend->num_layers();
  GridPoint p = expand_grid(StrategySpec{}, n, nullptr).at(0);
  for (const auto& s : config.strategies) {
    if (s.kind != Strategy::hispec) continue;
    auto pts = expand_grid(s, n, nullptr);
    if (!pts.empty()) {
      p = pts.front();
      break;
    }
  }
  const HiSpecConfig hc{p.draft_layer, p.verify_layer, p.final_layer, p.draft_len, p.window,
                        p.policy, config.max_new_tokens, config.eos};

  CheckSummary summary;
  DecodeHooks hooks;
  hooks.on_target_boundary = [&](const LayeredState& state, std::span<const TokenId> seq, bool) {
    ++summary.boundaries;
    const auto report = consistency_check(state, *backend, seq);
    summary.max_diff = std::max(summary.max_diff, report.max_diff());
    summary.occupant_mismatches += report.occupant_mismatches;
    for (int layer = 1; layer <= state.num_layers(); ++layer) {
      for (Index pos = 0; pos < state.filled_len(layer); ++pos) {
        if (state.compute_count(layer, pos) != 1) ++summary.recomputed_positions;
      }
    }
  };
  for (const auto& prompt : prompts) {
    const auto h = hispec_decode(*backend, prompt, hc, hooks);
    const auto v = vanilla_decode(*backend, prompt, config.max_new_tokens, std::nullopt, config.eos);
    if (h.tokens != v.tokens) ++summary.output_mismatches;
    ++summary.decodes;
  }
  return summary;
}

}  // namespace hsd
