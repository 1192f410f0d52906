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

// Command-line harness: sweeps, ablations, strategy comparisons, the
// verification wall table and state consistency checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hsd/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format = "csv";
  std::optional<int> jobs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON experiment config");
  cmd->add_option("--seed", c.seed, "Prompt seed (overrides the config)");
  cmd->add_option("--out", c.out_dir, "Output directory (default: stdout)");
  cmd->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"csv", "jsonl"}));
  cmd->add_option("--jobs", c.jobs, "Worker threads (default: HSD_JOBS or 1)")
      ->check(CLI::PositiveNumber);
}

hsd::ExperimentConfig load(const Common& c) {
  auto config = c.config_path.empty() ? hsd::parse_config("{}", "<defaults>")
                                      : hsd::load_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  return config;
}

int resolve_jobs(const Common& c) {
  if (c.jobs) return *c.jobs;
  if (const char* env = std::getenv("HSD_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (const std::exception&) {
    }
    throw hsd::ConfigError(std::string("HSD_JOBS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

hsd::ReportFormat format_of(const Common& c) {
  return c.format == "jsonl" ? hsd::ReportFormat::jsonl : hsd::ReportFormat::csv;
}

void output(const Common& c, const std::string& name, const hsd::ResultTable& table) {
  const auto fmt = format_of(c);
  if (c.out_dir.empty()) {
    hsd::emit_report(table, fmt, std::cout);
    return;
  }
  std::filesystem::create_directories(c.out_dir);
  const auto path = std::filesystem::path(c.out_dir) / (name + (c.format == "jsonl" ? ".jsonl" : ".csv"));
  hsd::write_report(table, fmt, path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical speculative decoding experiments"};
  app.require_subcommand(1);

  Common sweep_opts, ablate_opts, compare_opts, check_opts;
  auto* sweep = app.add_subcommand("sweep", "Run every grid point of the config's strategies");
  add_common(sweep, sweep_opts);

  auto* ablate = app.add_subcommand("ablate", "Vary N_d or N_i with other parameters fixed");
  add_common(ablate, ablate_opts);
  std::string ablate_param;
  std::vector<int> ablate_values;
  ablate->add_option("--param", ablate_param, "N_d or N_i (default: from config)")
      ->check(CLI::IsMember({"N_d", "N_i"}));
  ablate->add_option("--values", ablate_values, "Values to try (default: from config)")
      ->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Vanilla, selfspec and hispec on the same prompts");
  add_common(compare, compare_opts);

  auto* wall = app.add_subcommand("wall", "Verification wall ratios for reference model pairs");
  std::string wall_out;
  hsd::Index wall_positions = 7;
  wall->add_option("--out", wall_out, "Output directory (default: stdout)");
  wall->add_option("--positions", wall_positions, "Positions checked per verification pass")
      ->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "Consistency-check the state at every target boundary");
  add_common(check, check_opts);

  auto* matrix = app.add_subcommand("matrix", "Reshape a sweep CSV into an L_d x L_i matrix");
  std::string matrix_in = "-";
  std::string matrix_out;
  matrix->add_option("--in", matrix_in, "Sweep CSV ('-' for stdin)");
  matrix->add_option("--out", matrix_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    hsd::RunOptions run;
    run.log = &std::cerr;
    if (*sweep) {
      const auto config = load(sweep_opts);
      run.jobs = resolve_jobs(sweep_opts);
      output(sweep_opts, "sweep", hsd::run_sweep(config, run));
    } else if (*ablate) {
      const auto config = load(ablate_opts);
      run.jobs = resolve_jobs(ablate_opts);
      auto param = config.ablation_param.value_or(hsd::AblationParam::draft_len);
      if (!ablate_param.empty()) {
        param = ablate_param == "N_d" ? hsd::AblationParam::draft_len : hsd::AblationParam::window;
      }
      const auto values = ablate->count("--values") ? ablate_values : config.ablation_values;
      output(ablate_opts, param == hsd::AblationParam::draft_len ? "ablate_N_d" : "ablate_N_i",
             hsd::run_ablation(config, param, values, run));
    } else if (*compare) {
      const auto config = load(compare_opts);
      run.jobs = resolve_jobs(compare_opts);
      output(compare_opts, "compare", hsd::run_compare(config, run));
    } else if (*wall) {
      if (wall_out.empty()) {
        hsd::emit_wall(wall_positions, std::cout);
      } else {
        std::filesystem::create_directories(wall_out);
        std::ofstream out(std::filesystem::path(wall_out) / "wall.csv", std::ios::binary);
        if (!out) throw hsd::Error("cannot write " + wall_out + "/wall.csv");
        hsd::emit_wall(wall_positions, out);
      }
    } else if (*check) {
      const auto config = load(check_opts);
      const auto s = hsd::run_check(config);
      std::cout << "decodes " << s.decodes << "\nboundaries " << s.boundaries << "\nmax_diff "
                << hsd::format_real(s.max_diff) << "\noccupant_mismatches "
                << s.occupant_mismatches << "\nrecomputed_positions " << s.recomputed_positions
                << "\noutput_mismatches " << s.output_mismatches << "\n"
                << (s.clean() ? "clean" : "INCONSISTENT") << '\n';
      return s.clean() ? 0 : kExitRuntime;
    } else if (*matrix) {
      std::vector<hsd::ResultRow> rows;
      if (matrix_in == "-") {
        rows = hsd::parse_csv_report(std::cin);
      } else {
        std::ifstream in(matrix_in, std::ios::binary);
        if (!in) throw hsd::ConfigError("cannot read '" + matrix_in + "'");
        rows = hsd::parse_csv_report(in);
      }
      if (matrix_out.empty()) {
        hsd::emit_heatmap(rows, std::cout);
      } else {
        std::ofstream out(matrix_out, std::ios::binary);
        if (!out) throw hsd::Error("cannot write '" + matrix_out + "'");
        hsd::emit_heatmap(rows, out);
      }
    }
  } catch (const hsd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
