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

// Direct multiple-shooting transcription of the vehicle optimal control
// problems and an SQP solver on top of the dense QP kernel.
//
// Every vehicle contributes states (t, v, a) at the nodes of its spatial grid
// and one jerk u per cell. Rows:
//   defects      x_{k+1} - F(x_k, u_k) = 0           (node 0 is fixed)
//   path         path_constraints(x_k) >= 0          nodes 1..N
//   pins         t_k = xi                             vehicle problem
//   coupling     sum_j c_j t_j >= rhs                 fixed crossing orders
//
// Each QP subproblem is condensed onto the controls by forward recursion of
// the linearized defects, so the QP has one variable per cell.

#ifndef SITECOORD_NLP_CORE_HPP_
#define SITECOORD_NLP_CORE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "sitecoord/common.hpp"
#include "sitecoord/qp_solver.hpp"
#include "sitecoord/schedule.hpp"
#include "sitecoord/site_model.hpp"
#include "sitecoord/vehicle_dynamics.hpp"

namespace sitecoord {

struct VehicleGrid {
  std::vector<double> nodes;  // N + 1 positions, nodes[0] = 0
  std::vector<GridCell> cells;

  int num_cells() const { return static_cast<int>(cells.size()); }
  // Node index at `position` within 1e-9, or -1.
  int node_index(double position) const;
};

// Uniform grid of `base_cells` cells, with every required position turned into
// a node: uniform nodes closer than a tenth of a cell to a required position
// are dropped in its favor.
VehicleGrid make_vehicle_grid(const Path& path, int base_cells,
                              const std::vector<double>& required);

struct Trajectory {
  std::string vehicle_id;
  std::vector<double> grid;
  std::vector<double> t;
  std::vector<double> v;
  std::vector<double> a;
  std::vector<double> u;  // one per cell

  // Linear interpolation of t in p; clamps outside the grid.
  double time_at(double position) const;
};

struct VehicleBlock {
  std::string vehicle_id;
  VehicleGrid grid;
  VehicleParams params;
  std::vector<double> node_curvature;
  SpatialState initial;
  int offset = 0;          // first index in the decision vector
  int control_offset = 0;  // first index in the condensed QP

  int num_cells() const { return grid.num_cells(); }
  int num_nodes() const { return grid.num_cells() + 1; }
  int num_variables() const { return 3 * num_nodes() + num_cells(); }
  int t(int k) const { return offset + 3 * k; }
  int v(int k) const { return offset + 3 * k + 1; }
  int a(int k) const { return offset + 3 * k + 2; }
  int u(int k) const { return offset + 3 * num_nodes() + k; }
};

struct TimeTerm {
  int vehicle = 0;  // index into TranscribedNlp::vehicles
  int node = 0;
  double coef = 0.0;
};

enum class CouplingKind { kIntersection, kMergeEntry, kMergeInterior, kMergeExit };

const char* to_string(CouplingKind kind);

// sum(coef * t) >= rhs.
struct CouplingRow {
  std::vector<TimeTerm> terms;
  double rhs = 0.0;
  CouplingKind kind = CouplingKind::kIntersection;
  std::string zone_id;
  std::string leader;
  std::string follower;
};

struct PinRow {
  int vehicle = 0;
  int node = 0;
  double value = 0.0;
  double position = 0.0;
};

struct TranscribedNlp {
  std::vector<VehicleBlock> vehicles;
  std::vector<CouplingRow> coupling;
  std::vector<PinRow> pins;
  int num_variables = 0;
  int num_controls = 0;
  int substeps = 1;

  int num_defect_rows() const;
  int num_path_rows() const;
  int vehicle_slot(const std::string& vehicle_id) const;  // -1 if absent

  Vec pack(const std::vector<Trajectory>& trajectories) const;
  std::vector<Trajectory> unpack(const Vec& z) const;
  double objective(const Vec& z) const;
  std::vector<double> vehicle_objectives(const Vec& z) const;
  // Largest |x_{k+1} - F(x_k, u_k)| over all cells.
  double max_defect(const Vec& z) const;
  // Largest violation of path, pin and coupling rows.
  double max_violation(const Vec& z) const;
};

// Builds the problem for the listed vehicles (all when empty). `orders` adds
// the fixed-order safety rows; `pins` turns it into the vehicle problem.
// Every vehicle's grid contains the parameter positions of the whole
// scenario, so the same grid serves all problem variants.
TranscribedNlp transcribe(const Scenario& scenario,
                          const std::vector<std::string>& vehicles,
                          const CrossingOrders* orders = nullptr,
                          const TimeSlotSchedule* pins = nullptr,
                          int substeps = 1);

// Rows realizing one ordered pair inside a zone; exposed for tests.
std::vector<CouplingRow> ordered_pair_rows(const TranscribedNlp& nlp,
                                           const ConflictZone& zone,
                                           const std::string& leader,
                                           const std::string& follower);

// Constant-speed guess at v_initial: t = p / v_initial, a = u = 0.
Trajectory initial_guess_from(const Scenario& scenario, const std::string& vehicle_id);
Trajectory initial_guess_from(const VehicleBlock& block);

struct NlpMultipliers {
  Vec defects;   // 3 per cell, vehicle-major
  Vec path;      // kNumPathRows per node 1..N, vehicle-major, >= 0
  Vec pins;      // dV/dxi for each pin row (multiplier of t_k = xi)
  Vec coupling;  // >= 0
};

enum class NlpStatus { kOptimal, kMaxIter, kInfeasible };

// kGaussNewton: objective curvature only (stage costs and the travel-time
// integral), projected cell by cell. kExact: full Lagrangian Hessian,
// convexified after condensing.
enum class HessianMode { kGaussNewton, kExact };

const char* to_string(NlpStatus status);

struct SqpSettings {
  double kkt_tolerance = 1e-6;
  double defect_tolerance = 1e-8;
  double violation_tolerance = 1e-6;
  int max_iterations = 200;
  double hessian_floor = 1e-8;
  double elastic_penalty = 1e6;
  double armijo = 1e-4;
  double min_step = 1e-10;
  // Switch from Gauss-Newton to the exact Hessian once the reduced gradient
  // is below this.
  double exact_hessian_threshold = 1e-2;
};

struct NlpSolution {
  NlpStatus status = NlpStatus::kMaxIter;
  Vec z;
  std::vector<Trajectory> trajectories;
  NlpMultipliers multipliers;
  double objective = 0.0;
  std::vector<double> vehicle_objectives;
  double kkt_residual = 0.0;
  double max_defect = 0.0;
  double max_violation = 0.0;
  // Elastic slack left at the end; positive means the rows cannot be met.
  double elastic_residual = 0.0;
  int iterations = 0;
  QpSolution last_qp;
};

// Initial guess trajectories are packed in the NLP's vehicle order.
// `warm` supplies multipliers (and a QP working set) from an earlier solve of
// the same problem.
NlpSolution solve_sqp(const TranscribedNlp& nlp, const std::vector<Trajectory>& guess,
                      const SqpSettings& settings = {},
                      const NlpSolution* warm = nullptr);

// The QP in condensed control space at a point: the step du satisfies the
// linearized defects exactly, and H is the reduced Lagrangian Hessian.
// Rows of A_in are ordered path rows, then coupling rows; A_eq holds pins.
struct CondensedModel {
  QuadraticProgram qp;
  Mat W;  // d z / d u for the condensed step, z-rows by control columns
  Vec w;  // z-offset of the step that closes the current defects
  int num_path_rows = 0;
};

// `project` clips every cell block of the Lagrangian Hessian to eigenvalues
// >= floor; without it the exact Hessian is returned (used by sensitivity).
CondensedModel condense(const TranscribedNlp& nlp, const Vec& z,
                        const NlpMultipliers& multipliers, bool project,
                        double floor = 1e-8);

}  // namespace sitecoord

#endif  // SITECOORD_NLP_CORE_HPP_
