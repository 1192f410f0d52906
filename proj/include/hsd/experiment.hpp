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

#ifndef HSD_EXPERIMENT_HPP_
#define HSD_EXPERIMENT_HPP_

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsd/backend.hpp"
#include "hsd/decode.hpp"
#include "hsd/synthetic.hpp"
#include "hsd/transformer.hpp"

namespace hsd {

/// Either a seeded toy transformer or a synthetic layered oracle.
struct BackendSpec {
  enum class Kind { transformer, synthetic };
  Kind kind = Kind::synthetic;
  ModelConfig model;
  SyntheticModelSpec synthetic;

  int num_layers() const;
  int vocab_size() const;
  std::unique_ptr<ModelBackend> build() const;
};

/// A list of integer values, or every value valid for its strategy.
struct GridAxis {
  bool all = false;
  std::vector<int> values;

  static GridAxis single(int v) { return {false, {v}}; }
};

struct StrategySpec {
  Strategy kind = Strategy::hispec;
  // Unset axes take the decoder defaults.
  std::optional<GridAxis> draft_layer;
  std::optional<GridAxis> verify_layer;
  std::optional<GridAxis> draft_len;
  std::optional<GridAxis> window;
  AcceptancePolicy policy;
};

struct PromptSpec {
  Index count = 64;
  Index min_len = 4;
  Index max_len = 16;
  std::string text_file;  // one prompt per line, byte-level tokens; overrides random prompts
};

enum class AblationParam { draft_len, window };

struct ExperimentConfig {
  BackendSpec backend;
  std::vector<StrategySpec> strategies;  // empty: one default hispec point
  PromptSpec prompts;
  Index max_new_tokens = 64;
  std::optional<TokenId> eos;
  std::uint64_t seed = 0;
  std::optional<AblationParam> ablation_param;
  std::vector<int> ablation_values;
};

/// Parses a JSON config. Syntax errors carry the line number; `source`
/// names the input in messages. Throws ConfigError.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Seeded random prompts, or the byte-level tokenization of the text file.
std::vector<std::vector<TokenId>> make_prompts(const ExperimentConfig& config);
/// Bytes mapped to token ids modulo vocab_size.
std::vector<TokenId> tokenize_bytes(std::string_view text, int vocab_size);

struct GridPoint {
  Strategy kind = Strategy::vanilla;
  int draft_layer = 0;  // 0 where not applicable
  int verify_layer = 0;
  int final_layer = 0;
  int draft_len = 0;
  int window = 0;
  AcceptancePolicy policy;

  std::string label() const;  // strategy plus ":topK" for lossy policies
};

struct Skipped {
  GridPoint point;
  std::string reason;
};

/// Expands a strategy into grid points in sorted order; invalid points go
/// to `skipped`.
std::vector<GridPoint> expand_grid(const StrategySpec& spec, int n_layers,
                                   std::vector<Skipped>* skipped);

struct ResultRow {
  GridPoint point;
  Index prompts = 0;
  Index committed_tokens = 0;
  Index seq_units = 0;
  Index pos_layer_units = 0;
  Real acc_rate_intermediate = 0;
  Real acc_rate_target = 0;
  Index flushed = 0;
  Real rel_throughput = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<Skipped> skipped;
};

struct RunOptions {
  int jobs = 1;
  std::ostream* log = nullptr;  // warnings for skipped points
};

/// Runs every point over the same prompts, relative to a vanilla baseline
/// on those prompts. Rows are sorted by (strategy, L_d, L_i, N_d, N_i, policy).
ResultTable run_points(const ExperimentConfig& config, const std::vector<GridPoint>& points,
                       const RunOptions& options);
ResultTable run_sweep(const ExperimentConfig& config, const RunOptions& options = {});
/// Varies one of N_d / N_i over `values` with every other parameter at the
/// config's first hispec point (or the defaults).
ResultTable run_ablation(const ExperimentConfig& config, AblationParam param,
                         const std::vector<int>& values, const RunOptions& options = {});
/// Vanilla, default selfspec and default hispec, unless the config lists strategies.
ResultTable run_compare(const ExperimentConfig& config, const RunOptions& options = {});

enum class ReportFormat { csv, jsonl };

inline constexpr std::string_view kCsvHeader =
    "strategy,L_d,L_i,L_f,N_d,N_i,prompts,committed_tokens,seq_units,pos_layer_units,"
    "acc_rate_intermediate,acc_rate_target,flushed,rel_throughput";

void emit_report(const ResultTable& table, ReportFormat format, std::ostream& out);
/// Writes to `path`; throws Error when the file cannot be written.
void write_report(const ResultTable& table, ReportFormat format, const std::string& path);

/// Reads rows back from CSV written by emit_report.
std::vector<ResultRow> parse_csv_report(std::istream& in);

/// Throughput matrix over (L_d rows, L_i columns) for hispec rows, NaN for
/// cells with no row. The first line and first column hold the axis values.
void emit_heatmap(const std::vector<ResultRow>& rows, std::ostream& out);

/// Verification wall table as CSV.
void emit_wall(Index positions_per_verify, std::ostream& out);

/// Runs hispec decodes with a consistency check at every target boundary.
struct CheckSummary {
  Index decodes = 0;
  Index boundaries = 0;
  Real max_diff = 0;
  Index occupant_mismatches = 0;
  Index recomputed_positions = 0;  // compute counts above 1
  Index output_mismatches = 0;     // versus vanilla

  bool clean() const {
    return max_diff == 0 && occupant_mismatches == 0 && recomputed_positions == 0 &&
           output_mismatches == 0;
  }
};
CheckSummary run_check(const ExperimentConfig& config);

std::string format_real(Real v);

}  // namespace hsd

#endif  // HSD_EXPERIMENT_HPP_
