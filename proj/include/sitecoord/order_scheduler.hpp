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

// Crossing-order selection: a mixed-integer QP over the time-slot schedule T
// with the second-order model of every vehicle's value function,
//
//   min  1/2 T'H T + (grad V - H T0)'T
//   s.t. big-M ordering rows per shared zone and vehicle pair
//        travel-time bounds between consecutive parameters of each vehicle
//
// solved by best-first branch and bound over dense QP relaxations. Merge-split
// zones only order entry and exit; rear-end rows inside the zone are left to
// the fixed-order NLP.

#ifndef SITECOORD_ORDER_SCHEDULER_HPP_
#define SITECOORD_ORDER_SCHEDULER_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sitecoord/common.hpp"
#include "sitecoord/qp_solver.hpp"
#include "sitecoord/schedule.hpp"
#include "sitecoord/sensitivity.hpp"
#include "sitecoord/site_model.hpp"

namespace sitecoord {

// b = 1 iff `first` (the lower scenario index) crosses the zone before `second`.
struct OrderingBinary {
  std::string zone_id;
  std::string first;
  std::string second;
};

struct TimeParameter {
  std::string vehicle_id;
  double position = 0.0;
  double reference = 0.0;  // T0
};

enum class MiqpRowKind { kIntersection, kMergeEntry, kMergeExit, kTravelTime };

const char* to_string(MiqpRowKind kind);

// coef' x >= rhs over x = [T; b].
struct MiqpRow {
  std::vector<std::pair<int, double>> coef;
  double rhs = 0.0;
  MiqpRowKind kind = MiqpRowKind::kTravelTime;
  int binary = -1;  // -1 for rows without a binary
};

struct MiqpModel {
  std::vector<TimeParameter> parameters;
  std::vector<OrderingBinary> binaries;
  Mat H;  // over T, block diagonal
  Vec g;
  // Objective plus this constant approximates the total value sum V_i.
  double constant = 0.0;
  std::vector<MiqpRow> rows;
  double big_m = 0.0;

  int num_continuous() const { return static_cast<int>(parameters.size()); }
  int num_binaries() const { return static_cast<int>(binaries.size()); }
  // Column of the parameter, or -1.
  int parameter_index(const std::string& vehicle_id, double position) const;
  double objective(const Vec& T) const;
};

struct MiqpSettings {
  // Uses the PSD projection of each expansion's Hessian.
  bool use_psd_hessian = true;
  double prune_tolerance = 1e-9;
  double integrality_tolerance = 1e-6;
  double binary_regularization = 1e-8;
  int max_nodes = 100000;
};

// Expansions must cover every member of every zone. M = 2 max length / v_min.
MiqpModel build_miqp(const Scenario& scenario, const std::vector<ValueExpansion>& expansions,
                     const MiqpSettings& settings = {});

// Binaries whose value is ruled out by the travel-time windows
// t(p) in [p / v_max, p / v_min] get fixed: -1 free, 0 or 1 fixed.
std::vector<int> presolve(const Scenario& scenario, const MiqpModel& model);

struct FixedOrderQp {
  QpStatus status = QpStatus::kInfeasible;
  Vec T;
  double objective = 0.0;
  std::optional<InfeasibilityCertificate> certificate;
};

// The QP left after fixing every binary (values 0/1, one per binary).
FixedOrderQp solve_fixed_binaries(const MiqpModel& model, const std::vector<int>& values);

struct BnbStats {
  int nodes = 0;
  int qp_solves = 0;
  int pruned_by_bound = 0;
  int pruned_infeasible = 0;
  int fixed_by_presolve = 0;
};

struct MiqpResult {
  TimeSlotSchedule schedule;
  CrossingOrders orders;
  std::vector<int> binaries;
  Vec T;
  double objective = 0.0;
  BnbStats stats;
};

// Global optimum by best-first branch and bound, branching on the most
// fractional binary. Throws SolverError if no integer-feasible point exists.
MiqpResult solve_bnb(const Scenario& scenario, const MiqpModel& model,
                     const MiqpSettings& settings = {});

// Orders by entry time, ties by scenario order.
CrossingOrders extract_orders(const Scenario& scenario, const TimeSlotSchedule& schedule);

// Plain-text dump:
//   miqp <num_continuous> <num_binaries> <num_rows> <big_m> <constant>
//   param <col> <vehicle> <position> <T0>
//   binary <col> <zone> <first> <second>
//   H <i> <j> <value>            upper triangle, nonzeros
//   g <i> <value>
//   row <index> <kind> <rhs> <count> (<col> <coef>)...
// Binary columns follow the continuous ones.
void write_miqp(std::ostream& os, const MiqpModel& model);

}  // namespace sitecoord

#endif  // SITECOORD_ORDER_SCHEDULER_HPP_
