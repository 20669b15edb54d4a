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

#include "sitecoord/cli_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sitecoord/scenario_io.hpp"

namespace sitecoord {
namespace {

using json = nlohmann::ordered_json;

std::string fixed(double x, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

json orders_json(const CrossingOrders& orders) {
  json j = json::object();
  for (const auto& [zone, seq] : orders) j[zone] = seq;
  return j;
}

json vehicle_objectives_json(const Scenario& scenario, const CoordinationResult& r) {
  json j = json::object();
  for (std::size_t i = 0; i < scenario.num_vehicles(); ++i) {
    j[scenario.paths[i].vehicle_id] = r.vehicle_objectives.at(i);
  }
  return j;
}

void write_rows(const std::filesystem::path& path, const std::string& header,
                const std::vector<std::string>& rows) {
  std::ofstream out = open_out(path);
  out << header << '\n';
  for (const std::string& r : rows) out << r << '\n';
}

}  // namespace

std::optional<int> parse_args(int argc, const char* const* argv, RunConfig& config,
                              std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage coordination of automated vehicles on a confined site"};
  app.add_option("--scenario", config.scenario_path, "Scenario document (YAML)")->required();
  app.add_option("--out", config.output_dir, "Output directory")->capture_default_str();
  const std::map<std::string, RunMode> modes{{"uncoordinated", RunMode::kUncoordinated},
                                             {"coordinated", RunMode::kCoordinated},
                                             {"both", RunMode::kBoth}};
  app.add_option("--mode", config.mode, "uncoordinated, coordinated or both")
      ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case))
      ->default_str("both");
  app.add_flag("--emit-plot-data", config.emit_plot_data, "Write plot-data CSV files");
  app.add_option("--grid-n", config.grid_n, "Override the grid size N")
      ->check(CLI::PositiveNumber);
  app.add_option("--kkt-tol", config.kkt_tolerance, "SQP stationarity tolerance")
      ->check(CLI::PositiveNumber);
  app.add_option("--weight-p", config.weight_p, "Override the acceleration weight P")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--weight-q", config.weight_q, "Override the jerk weight Q")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--weight-r", config.weight_r, "Override the final-time weight R")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", config.seed, "Reserved; the pipeline is deterministic");
  app.add_option("--dump-miqp", config.miqp_dump_path, "Write the MIQP in text form");
  app.add_flag("--serial", config.serial, "Solve the vehicle problems one after another");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  return std::nullopt;
}

void apply_overrides(const RunConfig& config, Scenario& scenario) {
  if (config.grid_n) scenario.grid_n = *config.grid_n;
  for (VehicleParams& p : scenario.params) {
    if (config.weight_p) p.weights.P = *config.weight_p;
    if (config.weight_q) p.weights.Q = *config.weight_q;
    if (config.weight_r) p.weights.R = *config.weight_r;
  }
  validate(scenario);
}

CoordinatorSettings settings_from(const RunConfig& config) {
  CoordinatorSettings s;
  if (config.kkt_tolerance) {
    s.sqp.kkt_tolerance = *config.kkt_tolerance;
    s.sensitivity.sqp.kkt_tolerance = *config.kkt_tolerance;
  }
  s.parallel = !config.serial;
  s.miqp_dump_path = config.miqp_dump_path;
  return s;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  os << "p,t,v,a,u\n";
  for (std::size_t k = 0; k < tr.grid.size(); ++k) {
    const double u = tr.u.empty() ? 0.0 : tr.u[std::min(k, tr.u.size() - 1)];
    os << fixed(tr.grid[k], 6) << ',' << fixed(tr.t[k]) << ',' << fixed(tr.v[k]) << ','
       << fixed(tr.a[k]) << ',' << fixed(u) << '\n';
  }
}

void write_audit_json(std::ostream& os, const AuditReport& report) {
  json j;
  j["clean"] = report.clean();
  j["violated_zones"] = report.violated_zones();
  j["violations"] = json::array();
  for (const ZoneViolation& v : report.violations) {
    j["violations"].push_back({{"zone", v.zone_id},
                               {"constraint", v.constraint},
                               {"leader", v.leader},
                               {"follower", v.follower},
                               {"worst_margin_s", v.worst_margin},
                               {"leader_position_m", v.position}});
  }
  j["merge_gaps"] = json::array();
  for (const MergeGap& g : report.merge_gaps) {
    j["merge_gaps"].push_back({{"zone", g.zone_id},
                               {"leader", g.leader},
                               {"follower", g.follower},
                               {"min_gap_s", g.min_gap},
                               {"required_s", g.required},
                               {"leader_position_m", g.position}});
  }
  j["intersection_margins"] = json::array();
  for (const IntersectionMargin& m : report.intersection_margins) {
    j["intersection_margins"].push_back({{"zone", m.zone_id},
                                         {"leader", m.leader},
                                         {"follower", m.follower},
                                         {"margin_s", m.margin}});
  }
  os << j.dump(2) << '\n';
}

void write_summary_json(std::ostream& os, const Scenario& scenario,
                        const CoordinationResult& r) {
  json j;
  j["mode"] = to_string(r.mode);
  j["status"] = to_string(r.status);
  j["total_objective"] = r.total_objective;
  j["vehicle_objectives"] = vehicle_objectives_json(scenario, r);
  j["kkt_residual"] = r.kkt_residual;
  j["max_defect"] = r.max_defect;
  j["max_violation"] = r.max_violation;
  j["iterations"] = r.iterations;
  j["audit_clean"] = r.audit.clean();
  if (r.mode == CoordinationMode::kCoordinated) j["orders"] = orders_json(r.orders);
  if (r.miqp) {
    const BnbStats& st = r.miqp->stats;
    j["miqp"] = {{"objective", r.miqp->objective},
                 {"binaries", r.miqp->binaries},
                 {"nodes", st.nodes},
                 {"qp_solves", st.qp_solves},
                 {"pruned_by_bound", st.pruned_by_bound},
                 {"pruned_infeasible", st.pruned_infeasible},
                 {"fixed_by_presolve", st.fixed_by_presolve}};
  }
  if (!r.expansions.empty()) {
    json ex = json::object();
    for (const ValueExpansion& e : r.expansions) {
      ex[e.vehicle_id] = {{"parameters", e.positions.size()},
                          {"asymmetry", e.asymmetry},
                          {"degenerate_rows", e.degenerate.size()}};
    }
    j["expansions"] = ex;
  }
  os << j.dump(2) << '\n';
}

void write_timing_json(std::ostream& os, const CoordinationResult& r) {
  json j;
  j["mode"] = to_string(r.mode);
  j["total_s"] = r.timing.total;
  j["uncoordinated_s"] = r.timing.uncoordinated;
  if (r.mode == CoordinationMode::kCoordinated) {
    j["sensitivity_s"] = r.timing.sensitivity;
    j["miqp_s"] = r.timing.miqp;
    j["fixed_order_s"] = r.timing.fixed_order;
  }
  os << j.dump(2) << '\n';
}

void write_comparison_json(std::ostream& os, const Scenario& scenario,
                           const CoordinationResult& unc, const CoordinationResult& coord) {
  json j;
  j["uncoordinated"] = {{"total_objective", unc.total_objective},
                        {"violated_zones", unc.audit.violated_zones()},
                        {"vehicle_objectives", vehicle_objectives_json(scenario, unc)}};
  j["coordinated"] = {{"total_objective", coord.total_objective},
                      {"violated_zones", coord.audit.violated_zones()},
                      {"vehicle_objectives", vehicle_objectives_json(scenario, coord)}};
  j["objective_increase"] = coord.total_objective - unc.total_objective;
  j["relative_increase"] =
      (coord.total_objective - unc.total_objective) / std::abs(unc.total_objective);
  json arrival = json::object();
  for (std::size_t i = 0; i < scenario.num_vehicles(); ++i) {
    arrival[scenario.paths[i].vehicle_id] = {{"uncoordinated_s", unc.trajectories[i].t.back()},
                                             {"coordinated_s", coord.trajectories[i].t.back()}};
  }
  j["arrival_times"] = arrival;
  os << j.dump(2) << '\n';
}

void write_plot_data(const std::filesystem::path& dir, const Scenario& scenario,
                     const CoordinationResult& r) {
  std::filesystem::create_directories(dir);
  const auto& trs = r.trajectories;
  auto traj = [&](const std::string& id) -> const Trajectory& {
    return trs.at(scenario.vehicle_index(id));
  };

  std::vector<std::string> occupancy;
  for (const ConflictZone& zone : scenario.zones) {
    for (const ZoneMember& m : zone.members) {
      const Trajectory& tr = traj(m.vehicle_id);
      occupancy.push_back(zone.id + ',' + to_string(zone.kind) + ',' + m.vehicle_id + ',' +
                          fixed(tr.time_at(m.p_in)) + ',' + fixed(tr.time_at(m.p_out)));
    }
    if (zone.kind != ZoneKind::kMergeSplit) continue;

    // Positions relative to each member's zone entry, a zone length either side.
    std::vector<std::string> offset_rows;
    for (const ZoneMember& m : zone.members) {
      const Trajectory& tr = traj(m.vehicle_id);
      const double span = m.p_out - m.p_in;
      for (std::size_t k = 0; k < tr.grid.size(); ++k) {
        if (tr.grid[k] < m.p_in - span || tr.grid[k] > m.p_out + span) continue;
        offset_rows.push_back(m.vehicle_id + ',' + fixed(tr.t[k]) + ',' +
                              fixed(tr.grid[k] - m.p_in, 6));
      }
    }
    write_rows(dir / ("merge_" + zone.id + "_offset_position.csv"),
               "vehicle,t,offset_position", offset_rows);

    std::vector<std::string> gap_rows;
    for (std::size_t i = 0; i < zone.members.size(); ++i) {
      for (std::size_t j = i + 1; j < zone.members.size(); ++j) {
        const ZoneMember& a = zone.members[i];
        const ZoneMember& b = zone.members[j];
        const bool a_first = traj(a.vehicle_id).time_at(a.p_in) <=
                             traj(b.vehicle_id).time_at(b.p_in);
        const ZoneMember& lead = a_first ? a : b;
        const ZoneMember& follow = a_first ? b : a;
        for (const GapSample& g :
             merge_gap_profile(zone, lead.vehicle_id, follow.vehicle_id, trs)) {
          gap_rows.push_back(lead.vehicle_id + ',' + follow.vehicle_id + ',' +
                             fixed(g.leader_position - lead.p_in, 6) + ',' + fixed(g.gap) + ',' +
                             fixed(follow.time_headway, 6));
        }
      }
    }
    write_rows(dir / ("merge_" + zone.id + "_time_gap.csv"),
               "leader,follower,leader_offset_position,time_gap,required", gap_rows);
  }
  write_rows(dir / "occupancy.csv", "zone,kind,vehicle,t_in,t_out", occupancy);

  for (std::size_t i = 0; i < scenario.num_vehicles(); ++i) {
    const Path& path = scenario.paths[i];
    const VehicleParams& vp = scenario.params[i];
    const Trajectory& tr = trs[i];
    std::vector<std::string> rows;
    for (std::size_t k = 0; k < tr.grid.size(); ++k) {
      const double kappa = path.curvature_at(tr.grid[k]);
      const double limit =
          kappa > 0.0 ? std::min(vp.v_max, std::sqrt(vp.a_lat_max / kappa)) : vp.v_max;
      rows.push_back(fixed(tr.grid[k], 6) + ',' + fixed(tr.v[k]) + ',' + fixed(limit));
    }
    write_rows(dir / ("speed_" + path.vehicle_id + ".csv"), "p,v,curvature_limit", rows);
  }
}

void write_result(const std::filesystem::path& dir, const Scenario& scenario,
                  const CoordinationResult& result, bool plot_data) {
  std::filesystem::create_directories(dir);
  for (const Trajectory& tr : result.trajectories) {
    std::ofstream out = open_out(dir / ("trajectory_" + tr.vehicle_id + ".csv"));
    write_trajectory_csv(out, tr);
  }
  {
    std::ofstream out = open_out(dir / "audit.json");
    write_audit_json(out, result.audit);
  }
  {
    std::ofstream out = open_out(dir / "summary.json");
    write_summary_json(out, scenario, result);
  }
  {
    std::ofstream out = open_out(dir / "timing.json");
    write_timing_json(out, result);
  }
  if (plot_data) write_plot_data(dir / "plots", scenario, result);
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("sitecoord");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("COORD_LOG")) {
    const std::string level = env;
    if (level == "error") {
      spdlog::set_level(spdlog::level::err);
    } else if (level == "info") {
      spdlog::set_level(spdlog::level::info);
    } else if (level == "debug") {
      spdlog::set_level(spdlog::level::debug);
    } else {
      spdlog::warn("COORD_LOG='{}' not one of error, info, debug; using warn", level);
    }
  }
}

int run_cli(int argc, const char* const* argv) {
  RunConfig config;
  if (const std::optional<int> code = parse_args(argc, argv, config, std::cout, std::cerr)) {
    return *code;
  }
  if (!spdlog::get("sitecoord")) configure_logging();
  if (config.seed != 0) spdlog::debug("--seed {} ignored: the pipeline is deterministic", config.seed);

  Scenario scenario;
  try {
    scenario = load_scenario_file(config.scenario_path);
    apply_overrides(config, scenario);
    std::filesystem::create_directories(config.output_dir);
  } catch (const ValidationError& e) {
    std::cerr << "invalid scenario: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  const CoordinatorSettings settings = settings_from(config);

  std::optional<CoordinationResult> unc;
  std::optional<CoordinationResult> coord;
  try {
    if (config.mode != RunMode::kCoordinated) {
      unc = run_uncoordinated(scenario, settings);
      write_result(config.output_dir / "uncoordinated", scenario, *unc, config.emit_plot_data);
      std::cerr << "uncoordinated: objective " << fixed(unc->total_objective, 6) << ", "
                << unc->audit.violated_zones() << " zones violated, "
                << fixed(unc->timing.total, 3) << " s\n";
    }
    if (config.mode != RunMode::kUncoordinated) {
      coord = run_coordinated(scenario, settings);
      write_result(config.output_dir / "coordinated", scenario, *coord, config.emit_plot_data);
      const StageTiming& t = coord->timing;
      std::cerr << "coordinated: objective " << fixed(coord->total_objective, 6) << ", "
                << coord->audit.violated_zones() << " zones violated, " << fixed(t.total, 3)
                << " s (vehicles " << fixed(t.uncoordinated, 3) << ", sensitivities "
                << fixed(t.sensitivity, 3) << ", MIQP " << fixed(t.miqp, 3) << ", fixed order "
                << fixed(t.fixed_order, 3) << ")\n";
    }
    if (unc && coord) {
      std::ofstream out = open_out(config.output_dir / "comparison.json");
      write_comparison_json(out, scenario, *unc, *coord);
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  } catch (const SingularityError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSolver;
  }

  if (coord && coord->status != NlpStatus::kOptimal) {
    std::cerr << "fixed-order problem ended " << to_string(coord->status) << '\n';
    return kExitSolver;
  }
  if (coord && !coord->audit.clean()) {
    for (const ZoneViolation& v : coord->audit.violations) {
      std::cerr << "unsafe: " << v.zone_id << " " << v.constraint << " " << v.leader << " -> "
                << v.follower << " margin " << fixed(v.worst_margin, 6) << " s\n";
    }
    return kExitUnsafe;
  }
  return kExitOk;
}

}  // namespace sitecoord
