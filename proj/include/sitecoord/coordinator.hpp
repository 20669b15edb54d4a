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

// The two-stage coordination pipeline and the safety audit.
//
//   1. every vehicle alone, no safety rows            -> T0
//   2. vehicle problems pinned at T0                  -> value expansions
//   3. MIQP over T with ordering binaries             -> crossing orders
//   4. all vehicles jointly with the fixed orders     -> trajectories
//
// The audit re-checks the zone constraints on the final trajectories with its
// own interpolation, independent of the NLP rows.

#ifndef SITECOORD_COORDINATOR_HPP_
#define SITECOORD_COORDINATOR_HPP_

#include <optional>
#include <string>
#include <vector>

#include "sitecoord/nlp_core.hpp"
#include "sitecoord/order_scheduler.hpp"
#include "sitecoord/schedule.hpp"
#include "sitecoord/sensitivity.hpp"
#include "sitecoord/site_model.hpp"

namespace sitecoord {

struct ZoneViolation {
  std::string zone_id;
  std::string constraint;  // intersection, merge_entry, merge_interior, merge_exit
  std::string leader;
  std::string follower;
  double worst_margin = 0.0;  // seconds, negative
  double position = 0.0;      // leader position of the worst margin
};

// Smallest t_follower(shifted p) - t_leader(p) over a merge-split zone.
struct MergeGap {
  std::string zone_id;
  std::string leader;
  std::string follower;
  double min_gap = 0.0;
  double required = 0.0;  // follower headway
  double position = 0.0;
};

// Occupancy intervals of one vehicle pair in an intersection zone.
struct IntersectionMargin {
  std::string zone_id;
  std::string leader;
  std::string follower;
  double margin = 0.0;  // follower entry minus leader exit
};

struct AuditReport {
  std::vector<ZoneViolation> violations;
  std::vector<MergeGap> merge_gaps;
  std::vector<IntersectionMargin> intersection_margins;

  bool clean() const { return violations.empty(); }
  // Number of zones with at least one violation.
  int violated_zones() const;
};

struct AuditSettings {
  double tolerance = 1e-6;
  // Samples per grid cell inside merge-split zones.
  int density = 10;
};

AuditReport audit(const Scenario& scenario, const std::vector<Trajectory>& trajectories,
                  const AuditSettings& settings = {});

struct GapSample {
  const char* check;  // merge_entry, merge_interior or merge_exit
  double leader_position = 0.0;
  double gap = 0.0;  // follower time minus leader time
};

// The samples the audit takes inside a merge-split zone for an ordered pair.
std::vector<GapSample> merge_gap_profile(const ConflictZone& zone, const std::string& leader,
                                         const std::string& follower,
                                         const std::vector<Trajectory>& trajectories,
                                         const AuditSettings& settings = {});

enum class CoordinationMode { kUncoordinated, kCoordinated };

const char* to_string(CoordinationMode mode);

struct StageTiming {
  double uncoordinated = 0.0;
  double sensitivity = 0.0;
  double miqp = 0.0;
  double fixed_order = 0.0;
  double total = 0.0;
};

struct CoordinatorSettings {
  SqpSettings sqp;
  SensitivitySettings sensitivity;
  MiqpSettings miqp;
  AuditSettings audit;
  bool parallel = true;
  // Written before the MIQP is solved when nonempty.
  std::string miqp_dump_path;
};

struct CoordinationResult {
  CoordinationMode mode = CoordinationMode::kUncoordinated;
  NlpStatus status = NlpStatus::kOptimal;
  std::vector<Trajectory> trajectories;  // scenario vehicle order
  CrossingOrders orders;                 // coordinated only
  TimeSlotSchedule schedule;
  std::vector<double> vehicle_objectives;
  double total_objective = 0.0;
  AuditReport audit;
  StageTiming timing;
  std::optional<MiqpResult> miqp;
  std::vector<ValueExpansion> expansions;
  // KKT figures of the final solve (the worst vehicle when uncoordinated).
  double kkt_residual = 0.0;
  double max_defect = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
};

// Passing times at every parameter position of every vehicle with zones.
TimeSlotSchedule schedule_from(const Scenario& scenario,
                               const std::vector<Trajectory>& trajectories);

// Throws SolverError naming the vehicle if any solve is not optimal.
CoordinationResult run_uncoordinated(const Scenario& scenario,
                                     const CoordinatorSettings& settings = {});

// Throws SolverError carrying the orders when the fixed-order problem is
// infeasible.
CoordinationResult run_coordinated(const Scenario& scenario,
                                   const CoordinatorSettings& settings = {});

// Joint problem for given orders, seeded with `guess` (scenario vehicle
// order; constant-speed guesses when empty). Does not throw on infeasibility.
CoordinationResult solve_fixed_order(const Scenario& scenario, const CrossingOrders& orders,
                                     const std::vector<Trajectory>& guess,
                                     const CoordinatorSettings& settings = {});

// Every combination of per-zone member permutations.
std::vector<CrossingOrders> enumerate_orders(const Scenario& scenario);

}  // namespace sitecoord

#endif  // SITECOORD_COORDINATOR_HPP_
