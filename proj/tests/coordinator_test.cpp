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

#include "sitecoord/coordinator.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <limits>

#include "test_scenarios.hpp"

namespace sitecoord {
namespace {

using testing::crossing_pair;
using testing::intersection;
using testing::merge_split;
using testing::scenario_of;
using testing::straight;

// Hand-built trajectory with t = time(p) on 100 nodes over [0, 100].
Trajectory hand_trajectory(const std::string& id, const std::function<double(double)>& time) {
  Trajectory tr;
  tr.vehicle_id = id;
  for (int k = 0; k <= 100; ++k) {
    tr.grid.push_back(k);
    tr.t.push_back(time(k));
    tr.v.push_back(10.0);
    tr.a.push_back(0.0);
    if (k < 100) tr.u.push_back(0.0);
  }
  return tr;
}

Scenario hand_scenario(ConflictZone zone) {
  return scenario_of({straight("a", 0, 0, 100, 0), straight("b", 0, 5, 100, 5)}, {zone});
}

TEST(AuditTest, IntersectionMarginIsFollowerEntryMinusLeaderExit) {
  const Scenario s = hand_scenario(intersection("I1", {{"a", 45, 55}, {"b", 45, 55}}));
  const Trajectory a = hand_trajectory("a", [](double p) { return p / 10.0; });
  const Trajectory touching = hand_trajectory("b", [](double p) { return 1.0 + p / 10.0; });
  AuditReport r = audit(s, {a, touching});
  ASSERT_EQ(r.intersection_margins.size(), 1u);
  EXPECT_EQ(r.intersection_margins[0].leader, "a");
  EXPECT_NEAR(r.intersection_margins[0].margin, 0.0, 1e-12);
  EXPECT_TRUE(r.clean());

  const Trajectory early = hand_trajectory("b", [](double p) { return 0.8 + p / 10.0; });
  r = audit(s, {a, early});
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].constraint, "intersection");
  EXPECT_NEAR(r.violations[0].worst_margin, -0.2, 1e-12);
  EXPECT_EQ(r.violated_zones(), 1);
}

TEST(AuditTest, LeaderIsWhoeverEntersFirst) {
  const Scenario s = hand_scenario(intersection("I1", {{"a", 45, 55}, {"b", 45, 55}}));
  const Trajectory a = hand_trajectory("a", [](double p) { return 3.0 + p / 10.0; });
  const Trajectory b = hand_trajectory("b", [](double p) { return p / 10.0; });
  const AuditReport r = audit(s, {a, b});
  EXPECT_EQ(r.intersection_margins[0].leader, "b");
  EXPECT_NEAR(r.intersection_margins[0].margin, 2.0, 1e-12);
}

TEST(AuditTest, MergeExactHeadwayIsClean) {
  const Scenario s =
      hand_scenario(merge_split("M1", {{"a", 20, 80, 0.5, 0.0}, {"b", 20, 80, 0.5, 0.0}}));
  const Trajectory a = hand_trajectory("a", [](double p) { return p / 10.0; });
  const Trajectory b = hand_trajectory("b", [](double p) { return 0.5 + p / 10.0; });
  const AuditReport r = audit(s, {a, b});
  EXPECT_TRUE(r.clean());
  ASSERT_EQ(r.merge_gaps.size(), 1u);
  EXPECT_NEAR(r.merge_gaps[0].min_gap, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(r.merge_gaps[0].required, 0.5);
}

TEST(AuditTest, MergeOverrunIsDetectedInsideTheZone) {
  const Scenario s =
      hand_scenario(merge_split("M1", {{"a", 20, 80, 0.5, 0.0}, {"b", 20, 80, 0.5, 0.0}}));
  const Trajectory a = hand_trajectory("a", [](double p) { return p / 10.0; });
  // Gap 0.5 - 0.02 p: 0.1 at entry, -1.1 at exit.
  const Trajectory b = hand_trajectory("b", [](double p) { return 0.5 + p / 12.5; });
  const AuditReport r = audit(s, {a, b});
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].leader, "a");
  EXPECT_EQ(r.violations[0].constraint, "merge_exit");
  EXPECT_NEAR(r.violations[0].worst_margin, -1.6, 1e-12);
  EXPECT_NEAR(r.merge_gaps[0].min_gap, -1.1, 1e-12);
}

TEST(AuditTest, MergeOffsetShiftsTheFollower) {
  // Follower b measured 10 m further along its own path.
  const Scenario s =
      hand_scenario(merge_split("M1", {{"a", 20, 60, 0.5, 0.0}, {"b", 20, 60, 0.5, 10.0}}));
  const Trajectory a = hand_trajectory("a", [](double p) { return p / 10.0; });
  const Trajectory b = hand_trajectory("b", [](double p) { return p / 10.0; });
  const AuditReport r = audit(s, {a, b});
  EXPECT_NEAR(r.merge_gaps[0].min_gap, 1.0, 1e-12);
  EXPECT_TRUE(r.clean());
}

TEST(AuditTest, MissingTrajectoryThrows) {
  const Scenario s = hand_scenario(intersection("I1", {{"a", 45, 55}, {"b", 45, 55}}));
  EXPECT_THROW(audit(s, {hand_trajectory("a", [](double p) { return p; })}), Error);
}

TEST(EnumerateOrdersTest, ProductOfPermutations) {
  Scenario s = scenario_of(
      {straight("a", 0, 0, 400, 0), straight("b", 100, -100, 100, 300),
       straight("c", 300, -100, 300, 300)},
      {intersection("I1", {{"a", 95, 105}, {"b", 95, 105}}),
       intersection("I2", {{"a", 295, 305}, {"c", 95, 105}}),
       merge_split("M1", {{"a", 0, 50, 0.5, 0}, {"b", 0, 50, 0.5, 0}, {"c", 0, 50, 0.5, 0}})});
  EXPECT_EQ(enumerate_orders(s).size(), 2u * 2u * 6u);
}

CoordinatorSettings serial() {
  CoordinatorSettings c;
  c.parallel = false;
  return c;
}

TEST(CoordinatorTest, SingleVehicleHasNothingToAudit) {
  const Scenario s = scenario_of({straight("a", 0, 0, 300, 0)}, {}, 40);
  const CoordinationResult r = run_uncoordinated(s, serial());
  EXPECT_TRUE(r.audit.clean());
  EXPECT_TRUE(r.audit.intersection_margins.empty());
  EXPECT_TRUE(r.audit.merge_gaps.empty());
  ASSERT_EQ(r.trajectories.size(), 1u);
  EXPECT_EQ(r.status, NlpStatus::kOptimal);
}

TEST(CoordinatorTest, ParallelAndSerialAgree) {
  const Scenario s = crossing_pair();
  CoordinatorSettings par;
  const CoordinationResult p = run_uncoordinated(s, par);
  const CoordinationResult q = run_uncoordinated(s, serial());
  EXPECT_DOUBLE_EQ(p.total_objective, q.total_objective);
}

TEST(CoordinatorTest, DisjointOccupancyKeepsTheUncoordinatedSolution) {
  // a crosses after 50 m, b after 350 m.
  const Scenario s = crossing_pair(50.0, 350.0);
  const CoordinationResult free = run_uncoordinated(s, serial());
  ASSERT_TRUE(free.audit.clean());
  const CoordinationResult coord = run_coordinated(s, serial());
  EXPECT_TRUE(coord.audit.clean());
  EXPECT_NEAR(coord.total_objective, free.total_objective, 1e-6);
  EXPECT_EQ(coord.orders.at("I1"), (std::vector<std::string>{"a", "b"}));
}

TEST(CoordinatorTest, SymmetricConflictIsViolatedWithoutCoordination) {
  const CoordinationResult free = run_uncoordinated(crossing_pair(), serial());
  EXPECT_EQ(free.audit.violated_zones(), 1);
}

TEST(CoordinatorTest, CloserVehicleGoesFirstAndMatchesEnumeration) {
  // 30 m zone: the 20 m head start alone does not separate the occupancies.
  const Scenario s = crossing_pair(180.0, 200.0, 60, 15.0);
  const CoordinationResult free = run_uncoordinated(s, serial());
  ASSERT_EQ(free.audit.violated_zones(), 1);
  const CoordinationResult coord = run_coordinated(s, serial());
  ASSERT_EQ(coord.status, NlpStatus::kOptimal);
  EXPECT_EQ(coord.orders.at("I1"), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(coord.audit.clean());
  EXPECT_GT(coord.total_objective, free.total_objective);

  double best = std::numeric_limits<double>::infinity();
  CrossingOrders best_orders;
  for (const CrossingOrders& o : enumerate_orders(s)) {
    const CoordinationResult r = solve_fixed_order(s, o, free.trajectories, serial());
    if (r.status == NlpStatus::kOptimal && r.total_objective < best) {
      best = r.total_objective;
      best_orders = o;
    }
  }
  EXPECT_EQ(coord.orders, best_orders);
  EXPECT_NEAR(coord.total_objective, best, 1e-6 * best);
  ASSERT_TRUE(coord.miqp.has_value());
  EXPECT_EQ(coord.expansions.size(), 2u);
  EXPECT_GT(coord.timing.total, 0.0);
}

TEST(CoordinatorTest, ScheduleHoldsEveryParameter) {
  const Scenario s = crossing_pair();
  const CoordinationResult r = run_uncoordinated(s, serial());
  for (const Path& p : s.paths) {
    EXPECT_EQ(r.schedule.values(p.vehicle_id).size(),
              parameter_positions(s, p.vehicle_id).size());
  }
}

}  // namespace
}  // namespace sitecoord
