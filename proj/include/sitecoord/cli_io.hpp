// Copyright 2026 The sitecoord Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end and the result files.
//
// Layout under the output directory, per mode (uncoordinated/, coordinated/):
//   trajectory_<vehicle>.csv   p,t,v,a,u
//   audit.json                 violations, merge gaps, intersection margins
//   summary.json               status, objectives, orders, KKT figures
//   timing.json                seconds per stage
//   plots/                     with --emit-plot-data
// and comparison.json when both modes ran.

#ifndef SITECOORD_CLI_IO_HPP_
#define SITECOORD_CLI_IO_HPP_

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sitecoord/coordinator.hpp"
#include "sitecoord/site_model.hpp"

namespace sitecoord {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitSolver = 2,
  kExitUnsafe = 3,
};

enum class RunMode { kUncoordinated, kCoordinated, kBoth };

struct RunConfig {
  std::filesystem::path scenario_path;
  std::filesystem::path output_dir = "results";
  RunMode mode = RunMode::kBoth;
  bool emit_plot_data = false;
  std::optional<int> grid_n;
  std::optional<double> kkt_tolerance;
  std::optional<double> weight_p;
  std::optional<double> weight_q;
  std::optional<double> weight_r;
  int seed = 0;  // reserved; the pipeline is deterministic
  std::string miqp_dump_path;
  bool serial = false;
};

// Parses flags. Returns the exit code to stop with (help, bad flags) or
// nullopt to continue. Messages go to `err`.
std::optional<int> parse_args(int argc, const char* const* argv, RunConfig& config,
                              std::ostream& out, std::ostream& err);

// Applies grid and weight overrides and revalidates. Throws ValidationError.
void apply_overrides(const RunConfig& config, Scenario& scenario);

CoordinatorSettings settings_from(const RunConfig& config);

// Fixed formatting, one row per grid node; u is the control of the cell that
// starts at the node and is held on the last row.
void write_trajectory_csv(std::ostream& os, const Trajectory& trajectory);

void write_audit_json(std::ostream& os, const AuditReport& report);
void write_summary_json(std::ostream& os, const Scenario& scenario,
                        const CoordinationResult& result);
void write_timing_json(std::ostream& os, const CoordinationResult& result);
void write_comparison_json(std::ostream& os, const Scenario& scenario,
                           const CoordinationResult& uncoordinated,
                           const CoordinationResult& coordinated);

// Plot-data files for one result under `dir`:
//   merge_<zone>_offset_position.csv   vehicle,t,offset_position
//   merge_<zone>_time_gap.csv          leader_offset_position,time_gap,required
//   occupancy.csv                      zone,kind,vehicle,t_in,t_out
//   speed_<vehicle>.csv                p,v,curvature_limit
void write_plot_data(const std::filesystem::path& dir, const Scenario& scenario,
                     const CoordinationResult& result);

// Writes every file of one result under `dir`.
void write_result(const std::filesystem::path& dir, const Scenario& scenario,
                  const CoordinationResult& result, bool plot_data);

// Level from COORD_LOG (error, info, debug); warn when unset.
void configure_logging();

// Entry point of the command-line tool.
int run_cli(int argc, const char* const* argv);

}  // namespace sitecoord

#endif  // SITECOORD_CLI_IO_HPP_
