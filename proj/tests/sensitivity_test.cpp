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

#include "sitecoord/sensitivity.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_scenarios.hpp"

namespace sitecoord {
namespace {

using testing::crossing_pair;

struct Instance {
  Scenario scenario;
  std::string vehicle;
  TimeSlotSchedule reference;
  Trajectory free_optimum;
};

// Reference times: the vehicle's own optimum shifted by `delays` (one per
// parameter position).
Instance make_instance(Scenario s, const std::string& vehicle, std::vector<double> delays) {
  const TranscribedNlp nlp = transcribe(s, {vehicle});
  const NlpSolution free = solve_sqp(nlp, {initial_guess_from(nlp.vehicles[0])});
  EXPECT_EQ(free.status, NlpStatus::kOptimal);
  Instance in{std::move(s), vehicle, {}, free.trajectories[0]};
  const std::vector<double> pos = parameter_positions(in.scenario, vehicle);
  delays.resize(pos.size(), delays.empty() ? 0.0 : delays.back());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    in.reference.times[vehicle].emplace_back(pos[i], free.trajectories[0].time_at(pos[i]) + delays[i]);
  }
  return in;
}

SensitivitySettings tight() {
  SensitivitySettings s;
  s.sqp.kkt_tolerance = 1e-10;
  return s;
}

ValueExpansion expand(const Instance& in, const TimeSlotSchedule& ref) {
  return vehicle_value_and_sensitivities(in.scenario, in.vehicle, ref, tight(), &in.free_optimum);
}

TimeSlotSchedule shifted(const TimeSlotSchedule& ref, const std::string& v, int j, double h) {
  TimeSlotSchedule out = ref;
  out.times[v][j].second += h;
  return out;
}

double rel(double x, double ref) { return std::abs(x - ref) / std::max(std::abs(ref), 1.0); }

TEST(SensitivityTest, PinsAtTheOptimumHaveZeroGradient) {
  const Instance in = make_instance(crossing_pair(), "a", {0.0});
  const ValueExpansion ex = expand(in, in.reference);
  ASSERT_EQ(ex.gradient.size(), 2);
  EXPECT_LE(ex.gradient.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(ex.parameter_index(195.0), 0);
  EXPECT_EQ(ex.parameter_index(205.0), 1);
}

class FiniteDifferenceTest : public ::testing::TestWithParam<int> {};

Instance instance(int which) {
  switch (which) {
    case 0:
      return make_instance(crossing_pair(), "a", {1.0, 1.2});
    case 1:
      return make_instance(crossing_pair(200.0, 120.0), "b", {-0.5, -0.4});
    case 2:
      // Zone on the curve; the second member only makes the zone valid.
      return make_instance(
          testing::scenario_of({testing::curved("a", 80.0), testing::straight("b", 0, 50, 200, 50)},
                               {testing::intersection("I1", {{"a", 240.0, 260.0}, {"b", 95.0, 105.0}})}),
          "a", {0.8, 1.5});
    default:
      return make_instance(crossing_pair(300.0, 200.0), "a", {2.0, 2.5});
  }
}

TEST_P(FiniteDifferenceTest, GradientAndHessianMatch) {
  const Instance in = instance(GetParam());
  const ValueExpansion ex = expand(in, in.reference);
  const int n = static_cast<int>(ex.gradient.size());
  ASSERT_GE(n, 2);
  EXPECT_LE(ex.asymmetry, 1e-8);
  const double h = 1e-3;
  for (int j = 0; j < n; ++j) {
    const ValueExpansion up = expand(in, shifted(in.reference, in.vehicle, j, h));
    const ValueExpansion dn = expand(in, shifted(in.reference, in.vehicle, j, -h));
    const double fd = (up.value - dn.value) / (2 * h);
    EXPECT_LE(rel(ex.gradient(j), fd), 1e-4) << "component " << j;
    const Vec col = (up.gradient - dn.gradient) / (2 * h);
    for (int i = 0; i < n; ++i) {
      EXPECT_LE(rel(ex.hessian(i, j), col(i)), 1e-2) << i << "," << j;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Instances, FiniteDifferenceTest, ::testing::Range(0, 4));

TEST(SensitivityTest, QuadraticModelErrorFallsOffCubically) {
  const Instance in = make_instance(crossing_pair(), "a", {1.0, 1.2});
  const ValueExpansion ex = expand(in, in.reference);
  Vec dir(2);
  dir << 1.0, 0.7;
  std::vector<double> err;
  for (double d : {0.4, 0.2, 0.1}) {
    TimeSlotSchedule ref = in.reference;
    for (int j = 0; j < 2; ++j) ref.times[in.vehicle][j].second += d * dir(j);
    const double v = expand(in, ref).value;
    const Vec dx = d * dir;
    const double model = ex.value + ex.gradient.dot(dx) + 0.5 * dx.dot(ex.hessian * dx);
    err.push_back(std::abs(v - model));
  }
  // Halving delta divides the error by about eight.
  EXPECT_GT(err[0] / err[1], 5.0);
  EXPECT_GT(err[1] / err[2], 5.0);
}

TEST(ProjectPsdTest, ClipsOnlyBelowTheFloor) {
  std::mt19937 rng(5);
  std::normal_distribution<double> d;
  Mat a(4, 4);
  for (int i = 0; i < 16; ++i) a(i) = d(rng);
  const Mat spd = a * a.transpose() + Mat::Identity(4, 4);
  EXPECT_LE((project_psd(spd, 1e-8) - spd).cwiseAbs().maxCoeff(), 1e-12);
  Mat indefinite = spd;
  indefinite(0, 0) -= 50.0;
  const Mat p = project_psd(indefinite, 1e-8);
  Eigen::SelfAdjointEigenSolver<Mat> es(p);
  EXPECT_GE(es.eigenvalues().minCoeff(), 1e-8 * (1 - 1e-6));
  EXPECT_LE((project_psd(p, 1e-8) - p).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SensitivityTest, UnsolvedProblemIsRejected) {
  const Scenario s = crossing_pair();
  TimeSlotSchedule ref;
  ref.times["a"] = {{195.0, 3.0}, {205.0, 3.5}};
  EXPECT_THROW(vehicle_value_and_sensitivities(s, "a", ref), SolverError);
}

}  // namespace
}  // namespace sitecoord
