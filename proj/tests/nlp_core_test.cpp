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

#include "sitecoord/nlp_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "test_scenarios.hpp"

namespace sitecoord {
namespace {

using testing::crossing_pair;
using testing::curved;
using testing::merge_split;
using testing::scenario_of;
using testing::straight;

// Forward simulation of a control sequence from the block's initial state.
Trajectory rollout(const VehicleBlock& b, const std::vector<double>& u) {
  Trajectory tr = initial_guess_from(b);
  tr.u = u;
  SpatialState x = b.initial;
  tr.t[0] = x.t;
  tr.v[0] = x.v;
  tr.a[0] = x.a;
  for (int k = 0; k < b.num_cells(); ++k) {
    x = erk4_transition(x, {u[k]}, b.grid.cells[k]);
    tr.t[k + 1] = x.t;
    tr.v[k + 1] = x.v;
    tr.a[k + 1] = x.a;
  }
  return tr;
}

Scenario single_straight(double length = 1000.0) {
  return scenario_of({straight("a", 0.0, 0.0, length, 0.0)}, {});
}

TEST(GridTest, UniformWithoutRequiredPositions) {
  const Path p = straight("a", 0.0, 0.0, 1000.0, 0.0);
  const VehicleGrid g = make_vehicle_grid(p, 100, {});
  ASSERT_EQ(g.num_cells(), 100);
  for (int k = 0; k < 100; ++k) EXPECT_NEAR(g.cells[k].width(), 10.0, 1e-9);
  EXPECT_DOUBLE_EQ(g.nodes.back(), 1000.0);
}

TEST(GridTest, RequiredPositionsBecomeNodes) {
  const Path p = straight("a", 0.0, 0.0, 1000.0, 0.0);
  const std::vector<double> req{95.0, 105.0, 333.3, 500.0};
  const VehicleGrid g = make_vehicle_grid(p, 100, req);
  for (double q : req) EXPECT_GE(g.node_index(q), 0) << q;
  EXPECT_EQ(g.node_index(333.0), -1);
  // Near-coincident uniform nodes are replaced, not duplicated.
  for (const GridCell& c : g.cells) EXPECT_GT(c.width(), 0.9);
  EXPECT_GE(g.num_cells(), 100);
  EXPECT_LE(g.num_cells(), 104);
}

TEST(TranscribeTest, PackUnpackRoundTrip) {
  const Scenario s = crossing_pair();
  const TranscribedNlp nlp = transcribe(s, {});
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  Vec z(nlp.num_variables);
  for (int i = 0; i < z.size(); ++i) z(i) = d(rng);
  EXPECT_EQ(nlp.pack(nlp.unpack(z)), z);
}

TEST(TranscribeTest, SingleVehicleHasNoCouplingOrPins) {
  const TranscribedNlp nlp = transcribe(single_straight(), {});
  ASSERT_EQ(nlp.vehicles.size(), 1u);
  EXPECT_TRUE(nlp.coupling.empty());
  EXPECT_TRUE(nlp.pins.empty());
  EXPECT_EQ(nlp.num_variables, 3 * 101 + 100);
  EXPECT_EQ(nlp.num_defect_rows(), 300);
  EXPECT_EQ(nlp.num_path_rows(), kNumPathRows * 100);
}

TEST(TranscribeTest, PinsAtOneZoneAddTwoRows) {
  const Scenario s = crossing_pair();
  TimeSlotSchedule pins;
  pins.times["a"] = {{195.0, 14.0}, {205.0, 14.7}};
  const TranscribedNlp nlp = transcribe(s, {"a"}, nullptr, &pins);
  ASSERT_EQ(nlp.pins.size(), 2u);
  EXPECT_DOUBLE_EQ(nlp.vehicles[0].grid.nodes[nlp.pins[0].node], 195.0);
  EXPECT_DOUBLE_EQ(nlp.vehicles[0].grid.nodes[nlp.pins[1].node], 205.0);
  EXPECT_TRUE(nlp.coupling.empty());
}

TEST(TranscribeTest, IntersectionOrderAddsOneRow) {
  const Scenario s = crossing_pair(200.0, 150.0);
  const CrossingOrders orders{{"I1", {"a", "b"}}};
  const TranscribedNlp nlp = transcribe(s, {}, &orders);
  ASSERT_EQ(nlp.coupling.size(), 1u);
  const CouplingRow& row = nlp.coupling[0];
  EXPECT_EQ(row.kind, CouplingKind::kIntersection);
  EXPECT_EQ(row.rhs, 0.0);
  ASSERT_EQ(row.terms.size(), 2u);
  // t_b(p_in) - t_a(p_out) >= 0
  EXPECT_EQ(row.terms[0].vehicle, 1);
  EXPECT_DOUBLE_EQ(nlp.vehicles[1].grid.nodes[row.terms[0].node], 145.0);
  EXPECT_EQ(row.terms[0].coef, 1.0);
  EXPECT_EQ(row.terms[1].vehicle, 0);
  EXPECT_DOUBLE_EQ(nlp.vehicles[0].grid.nodes[row.terms[1].node], 205.0);
  EXPECT_EQ(row.terms[1].coef, -1.0);
}

TEST(TranscribeTest, CouplingAndPinsAreExclusive) {
  const Scenario s = crossing_pair();
  const CrossingOrders orders{{"I1", {"a", "b"}}};
  TimeSlotSchedule pins;
  EXPECT_THROW(transcribe(s, {}, &orders, &pins), Error);
}

TEST(TranscribeTest, MergeRowsCarryFollowerHeadway) {
  Scenario s = scenario_of(
      {straight("a", 0.0, 0.0, 300.0, 0.0), straight("b", 0.0, 1.0, 300.0, 1.0)},
      {merge_split("M1", {{"a", 100.0, 200.0, 0.5, 0.0}, {"b", 100.0, 200.0, 0.7, 0.0}})}, 30);
  const CrossingOrders orders{{"M1", {"a", "b"}}};
  const TranscribedNlp nlp = transcribe(s, {}, &orders);
  ASSERT_GE(nlp.coupling.size(), 3u);
  EXPECT_EQ(nlp.coupling.front().kind, CouplingKind::kMergeEntry);
  EXPECT_EQ(nlp.coupling.back().kind, CouplingKind::kMergeExit);
  for (const CouplingRow& row : nlp.coupling) {
    EXPECT_DOUBLE_EQ(row.rhs, 0.7);
    EXPECT_EQ(row.leader, "a");
    EXPECT_EQ(row.follower, "b");
  }
  // Interior rows at every leader node strictly inside the zone (10 m grid).
  const auto interior = std::count_if(nlp.coupling.begin(), nlp.coupling.end(),
                                      [](const CouplingRow& r) {
                                        return r.kind == CouplingKind::kMergeInterior;
                                      });
  EXPECT_EQ(interior, 9);
}

TEST(InitialGuessTest, ConstantSpeedHasNoDefects) {
  const Scenario s = single_straight();
  const TranscribedNlp nlp = transcribe(s, {});
  const Trajectory g = initial_guess_from(s, "a");
  const Vec z = nlp.pack({g});
  EXPECT_LE(nlp.max_defect(z), 1e-12);
  EXPECT_NEAR(g.t.back(), 1000.0 / s.params[0].v_initial, 1e-9);
  EXPECT_EQ(nlp.max_violation(z), 0.0);
}

TEST(InitialGuessTest, CurvatureFeasibilityFollowsLateralLimit) {
  // kappa * v^2 <= a_lat: 13.89^2 / 200 = 0.96 fits, 13.89^2 / 50 = 3.9 does not.
  const Scenario wide = scenario_of({curved("a", 200.0)}, {});
  const TranscribedNlp nw = transcribe(wide, {});
  EXPECT_LE(nw.max_violation(nw.pack({initial_guess_from(wide, "a")})), 1e-12);
  const Scenario tight = scenario_of({curved("a", 50.0)}, {});
  const TranscribedNlp nt = transcribe(tight, {});
  EXPECT_GT(nt.max_violation(nt.pack({initial_guess_from(tight, "a")})), 0.5);
}

// The condensed linearization against central differences of the simulated
// trajectory: W columns are d z / d u, A_in columns are d g / d u.
TEST(CondenseTest, JacobianMatchesFiniteDifferences) {
  const Scenario s = scenario_of({curved("a", 120.0, 60.0)}, {}, 20);
  const TranscribedNlp nlp = transcribe(s, {});
  const VehicleBlock& b = nlp.vehicles[0];
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  std::vector<double> u(b.num_cells());
  for (double& x : u) x = d(rng);
  const Vec z = nlp.pack({rollout(b, u)});
  NlpMultipliers m;
  m.defects = Vec::Zero(nlp.num_defect_rows());
  m.path = Vec::Zero(nlp.num_path_rows());
  const CondensedModel cm = condense(nlp, z, m, true);
  EXPECT_LE(cm.w.cwiseAbs().maxCoeff(), 1e-12);

  auto path_values = [&](const Vec& zz) {
    Vec g(nlp.num_path_rows());
    for (int k = 1; k <= b.num_cells(); ++k) {
      const auto r = path_constraints({zz(b.t(k)), zz(b.v(k)), zz(b.a(k))}, {}, b.params,
                                      b.node_curvature[k]);
      for (int i = 0; i < kNumPathRows; ++i) g(kNumPathRows * (k - 1) + i) = r[i];
    }
    return g;
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (int j = 0; j < b.num_cells(); ++j) {
    std::vector<double> up = u;
    std::vector<double> dn = u;
    up[j] += h;
    dn[j] -= h;
    const Vec zp = nlp.pack({rollout(b, up)});
    const Vec zm = nlp.pack({rollout(b, dn)});
    const Vec dz = (zp - zm) / (2 * h);
    const Vec dg = (path_values(zp) - path_values(zm)) / (2 * h);
    for (int i = 0; i < dz.size(); ++i) {
      worst = std::max(worst, std::abs(dz(i) - cm.W(i, j)) / std::max(1.0, std::abs(dz(i))));
    }
    for (int i = 0; i < dg.size(); ++i) {
      worst = std::max(worst,
                       std::abs(dg(i) - cm.qp.A_in(i, j)) / std::max(1.0, std::abs(dg(i))));
    }
  }
  EXPECT_LE(worst, 1e-5);
}

void expect_optimal(const TranscribedNlp& nlp, const NlpSolution& sol) {
  ASSERT_EQ(sol.status, NlpStatus::kOptimal);
  EXPECT_LE(sol.kkt_residual, 1e-6);
  EXPECT_LE(sol.max_defect, 1e-8);
  EXPECT_LE(sol.max_violation, 1e-6);
  EXPECT_LE(nlp.max_defect(sol.z), 1e-8);
  EXPECT_LE(nlp.max_violation(sol.z), 1e-6);
  for (const Trajectory& tr : sol.trajectories) {
    const VehicleParams& p = nlp.vehicles[nlp.vehicle_slot(tr.vehicle_id)].params;
    for (std::size_t k = 0; k + 1 < tr.t.size(); ++k) EXPECT_LT(tr.t[k], tr.t[k + 1]);
    for (double v : tr.v) {
      EXPECT_GE(v, p.v_min - 1e-6);
      EXPECT_LE(v, p.v_max + 1e-6);
    }
  }
}

// Exhaustive search over piecewise-constant jerk in {-2, ..., 2} on four
// 5-cell segments followed by coasting; the cheapest feasible candidate is
// an upper bound on the optimum.
double brute_force_upper_bound(const TranscribedNlp& nlp) {
  const VehicleBlock& b = nlp.vehicles[0];
  double best = std::numeric_limits<double>::infinity();
  const int segments = 4;
  const int width = 5;
  int combos = 1;
  for (int i = 0; i < segments; ++i) combos *= 5;
  for (int c = 0; c < combos; ++c) {
    std::vector<double> u(b.num_cells(), 0.0);
    int code = c;
    for (int sgm = 0; sgm < segments; ++sgm) {
      const double j = code % 5 - 2.0;
      code /= 5;
      for (int k = 0; k < width; ++k) u[sgm * width + k] = j;
    }
    Trajectory tr;
    try {
      tr = rollout(b, u);
    } catch (const SingularityError&) {
      continue;
    }
    const Vec z = nlp.pack({tr});
    if (nlp.max_violation(z) > 0.0) continue;
    best = std::min(best, nlp.objective(z));
  }
  return best;
}

TEST(SqpTest, StraightPathBeatsBruteForce) {
  const Scenario s = single_straight();
  const TranscribedNlp nlp = transcribe(s, {});
  const NlpSolution sol = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  expect_optimal(nlp, sol);
  const double oracle = brute_force_upper_bound(nlp);
  ASSERT_TRUE(std::isfinite(oracle));
  EXPECT_LE(sol.objective, oracle);
  // Speeds up toward v_max.
  EXPECT_GT(sol.trajectories[0].v.back(), s.params[0].v_initial + 5.0);
}

TEST(SqpTest, ObjectiveMatchesReevaluation) {
  const Scenario s = scenario_of({curved("a", 80.0)}, {});
  const TranscribedNlp nlp = transcribe(s, {});
  const NlpSolution sol = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  expect_optimal(nlp, sol);
  const Trajectory& tr = sol.trajectories[0];
  const VehicleBlock& b = nlp.vehicles[0];
  double j = 0.0;
  for (int k = 0; k < b.num_cells(); ++k) {
    j += stage_cost({tr.t[k], tr.v[k], tr.a[k]}, {tr.u[k]}, tr.grid[k + 1] - tr.grid[k],
                    b.params.weights);
  }
  j += terminal_cost(tr.t.back(), b.params.weights.R);
  EXPECT_NEAR(sol.objective, j, 1e-10);
}

TEST(SqpTest, CurveRespectsLateralLimit) {
  const Scenario s = scenario_of({curved("a", 50.0)}, {});
  const TranscribedNlp nlp = transcribe(s, {});
  const NlpSolution sol = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  expect_optimal(nlp, sol);
  const Trajectory& tr = sol.trajectories[0];
  double slowest = 1e9;
  for (std::size_t k = 0; k < tr.grid.size(); ++k) {
    const double kappa = nlp.vehicles[0].node_curvature[k];
    if (kappa > 1e-3) {
      EXPECT_LE(tr.v[k], std::sqrt(s.params[0].a_lat_max / kappa) + 1e-6);
      slowest = std::min(slowest, tr.v[k]);
    }
  }
  EXPECT_LT(slowest, s.params[0].v_initial);
}

TEST(SqpTest, WarmResolveIsAFixedPoint) {
  const Scenario s = single_straight();
  const TranscribedNlp nlp = transcribe(s, {});
  const NlpSolution first = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  ASSERT_EQ(first.status, NlpStatus::kOptimal);
  const NlpSolution again = solve_sqp(nlp, first.trajectories, {}, &first);
  ASSERT_EQ(again.status, NlpStatus::kOptimal);
  EXPECT_LE(again.iterations, 2);
  EXPECT_NEAR(again.objective, first.objective, 1e-8);
}

TEST(SqpTest, PinsAtTheOptimumChangeNothing) {
  const Scenario s = crossing_pair();
  const TranscribedNlp free = transcribe(s, {"a"});
  const NlpSolution base = solve_sqp(free, {initial_guess_from(free.vehicles[0])});
  ASSERT_EQ(base.status, NlpStatus::kOptimal);
  TimeSlotSchedule pins;
  for (double p : parameter_positions(s, "a")) {
    pins.times["a"].emplace_back(p, base.trajectories[0].time_at(p));
  }
  const TranscribedNlp pinned = transcribe(s, {"a"}, nullptr, &pins);
  ASSERT_EQ(pinned.pins.size(), 2u);
  const NlpSolution sol = solve_sqp(pinned, {initial_guess_from(pinned.vehicles[0])});
  expect_optimal(pinned, sol);
  EXPECT_NEAR(sol.objective, base.objective, 1e-6);
  EXPECT_LE(sol.multipliers.pins.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(SqpTest, DelayedPinsCostMore) {
  const Scenario s = crossing_pair();
  const TranscribedNlp free = transcribe(s, {"a"});
  const NlpSolution base = solve_sqp(free, {initial_guess_from(free.vehicles[0])});
  TimeSlotSchedule pins;
  for (double p : parameter_positions(s, "a")) {
    pins.times["a"].emplace_back(p, base.trajectories[0].time_at(p) + 2.0);
  }
  const TranscribedNlp pinned = transcribe(s, {"a"}, nullptr, &pins);
  const NlpSolution sol = solve_sqp(pinned, {initial_guess_from(pinned.vehicles[0])});
  expect_optimal(pinned, sol);
  EXPECT_GT(sol.objective, base.objective + 1e-3);
  EXPECT_NEAR(sol.trajectories[0].time_at(195.0), pins.times["a"][0].second, 1e-6);
}

TEST(SqpTest, UnreachablePinsAreInfeasible) {
  const Scenario s = crossing_pair();
  TimeSlotSchedule pins;
  // 195 m in 3 s needs 65 m/s on average.
  pins.times["a"] = {{195.0, 3.0}, {205.0, 3.5}};
  const TranscribedNlp nlp = transcribe(s, {"a"}, nullptr, &pins);
  const NlpSolution sol = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  EXPECT_EQ(sol.status, NlpStatus::kInfeasible);
  EXPECT_GT(sol.elastic_residual, 1e-3);
}

TEST(SqpTest, FixedOrderIntersectionIsSafe) {
  const Scenario s = crossing_pair(200.0, 200.0);
  const CrossingOrders orders{{"I1", {"a", "b"}}};
  const TranscribedNlp nlp = transcribe(s, {}, &orders);
  std::vector<Trajectory> guess;
  for (const VehicleBlock& b : nlp.vehicles) guess.push_back(initial_guess_from(b));
  const NlpSolution sol = solve_sqp(nlp, guess);
  expect_optimal(nlp, sol);
  const double a_out = sol.trajectories[0].time_at(205.0);
  const double b_in = sol.trajectories[1].time_at(195.0);
  EXPECT_GE(b_in - a_out, -1e-6);
  EXPECT_GT(sol.multipliers.coupling(0), 0.0);
  ASSERT_EQ(sol.vehicle_objectives.size(), 2u);
  EXPECT_NEAR(sol.vehicle_objectives[0] + sol.vehicle_objectives[1], sol.objective, 1e-9);
}

TEST(SqpTest, DoublingTheGridBarelyMovesTheObjective) {
  Scenario s = scenario_of({curved("a", 60.0)}, {}, 50);
  const TranscribedNlp coarse = transcribe(s, {});
  const double j1 = solve_sqp(coarse, {initial_guess_from(coarse.vehicles[0])}).objective;
  s.grid_n = 100;
  const TranscribedNlp fine = transcribe(s, {});
  const NlpSolution sol = solve_sqp(fine, {initial_guess_from(fine.vehicles[0])});
  expect_optimal(fine, sol);
  EXPECT_LE(std::abs(sol.objective - j1) / j1, 0.01);
}

}  // namespace
}  // namespace sitecoord
