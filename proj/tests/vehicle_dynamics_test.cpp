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

#include "sitecoord/vehicle_dynamics.hpp"

#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace sitecoord {
namespace {

using testing::state_error;
using testing::time_domain_oracle;

GridCell straight_cell(double dp) { return GridCell{0.0, dp, {0.0, 0.0, 0.0}}; }

double rel(double x, double ref) { return std::abs(x - ref) / std::max(1.0, std::abs(ref)); }

TEST(Erk4Test, ConstantSpeedIsExact) {
  const SpatialState s = erk4_transition({0.0, 10.0, 0.0}, {0.0}, straight_cell(5.0));
  EXPECT_DOUBLE_EQ(s.t, 0.5);
  EXPECT_DOUBLE_EQ(s.v, 10.0);
  EXPECT_DOUBLE_EQ(s.a, 0.0);
}

TEST(Erk4Test, ConstantAccelerationMatchesClosedForm) {
  const double v_end = std::sqrt(120.0);
  const SpatialState exact{(v_end - 10.0) / 2.0, v_end, 2.0};
  const SpatialState s = erk4_transition({0.0, 10.0, 2.0}, {0.0}, straight_cell(5.0));
  EXPECT_LE(state_error(s, exact), 1e-6);
  // One step leaves 1.6e-6 relative error in t alone; two substeps remove it.
  const SpatialState fine = erk4_transition({0.0, 10.0, 2.0}, {0.0}, straight_cell(5.0), 2);
  EXPECT_LE(std::abs(fine.t - exact.t) / exact.t, 1e-6);
  EXPECT_LE(std::abs(fine.v - exact.v) / exact.v, 1e-6);
}

TEST(Erk4Test, ConstantJerkMatchesDenseTimeOracle) {
  for (const auto& [v, a, u] : {std::array{10.0, 0.0, 1.0}, std::array{13.9, 1.5, -2.0},
                                std::array{22.0, -1.0, 0.5}}) {
    const SpatialState start{2.0, v, a};
    const SpatialState s = erk4_transition(start, {u}, straight_cell(5.0));
    const SpatialState o = time_domain_oracle(start, u, 5.0);
    EXPECT_LE(rel(s.t, o.t), 1e-6);
    EXPECT_LE(rel(s.v, o.v), 1e-6);
    EXPECT_LE(rel(s.a, o.a), 1e-6);
    EXPECT_LE(state_error(s, o), 1e-6);
  }
}

TEST(Erk4Test, ObservedOrderUnderHalving) {
  const SpatialState start{0.0, 5.0, 1.0};
  const double u = 0.5;
  const double dp = 40.0;
  const SpatialState o = time_domain_oracle(start, u, dp);
  auto error = [&](int substeps) {
    const SpatialState s = erk4_transition(start, {u}, straight_cell(dp), substeps);
    return std::max({std::abs(s.t - o.t), std::abs(s.v - o.v), std::abs(s.a - o.a)});
  };
  const double e1 = error(2);
  const double e2 = error(4);
  const double e3 = error(8);
  EXPECT_GE(std::log2(e1 / e2), 3.5);
  EXPECT_GE(std::log2(e2 / e3), 3.5);
}

TEST(Erk4Test, TimeIsMonotone) {
  SpatialState s{0.0, 8.0, 0.0};
  for (int k = 0; k < 50; ++k) {
    const SpatialState next = erk4_transition(s, {k % 2 == 0 ? 0.4 : -0.4}, straight_cell(2.0));
    EXPECT_GT(next.t, s.t);
    s = next;
  }
}

TEST(Erk4Test, StallingThrowsSingularity) {
  try {
    erk4_transition({0.0, 1.0, -4.0}, {0.0}, GridCell{30.0, 40.0, {}});
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_GE(e.position(), 30.0);
    EXPECT_LT(e.speed(), kIntegratorSpeedFloor);
  }
}

TEST(Erk4Test, DerivativesMatchFiniteDifferences) {
  const GridCell cell{10.0, 14.0, {0.01, 0.012, 0.015}};
  const SpatialState s{1.0, 9.0, 0.7};
  const double u = -0.3;
  const TransitionDerivatives d = erk4_transition_derivatives(s, {u}, cell);
  const SpatialState plain = erk4_transition(s, {u}, cell);
  EXPECT_DOUBLE_EQ(d.next.t, plain.t);
  EXPECT_DOUBLE_EQ(d.next.v, plain.v);
  EXPECT_DOUBLE_EQ(d.next.a, plain.a);

  auto eval = [&](const Eigen::Vector3d& x) {
    const SpatialState n = erk4_transition({s.t, x(0), x(1)}, {x(2)}, cell);
    return Eigen::Vector3d(n.t, n.v, n.a);
  };
  const Eigen::Vector3d x0(s.v, s.a, u);
  const double h = 1e-5;
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e(j) = h;
    const Eigen::Vector3d fd = (eval(x0 + e) - eval(x0 - e)) / (2 * h);
    for (int r = 0; r < 3; ++r) {
      EXPECT_NEAR(d.jacobian(r, j), fd(r), 1e-6 * std::max(1.0, std::abs(fd(r))));
    }
  }
  const double h2 = 1e-4;
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d ej = Eigen::Vector3d::Zero();
      Eigen::Vector3d ek = Eigen::Vector3d::Zero();
      ej(j) = h2;
      ek(k) = h2;
      const Eigen::Vector3d fd = (eval(x0 + ej + ek) - eval(x0 + ej - ek) - eval(x0 - ej + ek) +
                                  eval(x0 - ej - ek)) /
                                 (4 * h2 * h2);
      for (int r = 0; r < 3; ++r) {
        EXPECT_NEAR(d.hessian[r](j, k), fd(r), 1e-4 * std::max(1.0, std::abs(fd(r))));
      }
    }
  }
}

VehicleParams bundled_params() { return VehicleParams{}; }

TEST(PathConstraintsTest, EllipseBoundary) {
  const auto r = path_constraints({0, 10.0, 0.0}, {0.0}, bundled_params(), 0.02);
  EXPECT_NEAR(r[kFrictionEllipse], 0.0, 1e-15);
}

TEST(PathConstraintsTest, StraightRoadEllipseInactive) {
  const auto r = path_constraints({0, 10.0, 0.0}, {0.0}, bundled_params(), 0.0);
  EXPECT_EQ(r[kFrictionEllipse], 1.0);
}

TEST(PathConstraintsTest, SpeedAndAccelerationBoundary) {
  const auto r = path_constraints({0, 25.0, 4.0}, {0.0}, bundled_params(), 0.0);
  EXPECT_EQ(r[kSpeedUpper], 0.0);
  EXPECT_EQ(r[kAccelUpper], 0.0);
  EXPECT_EQ(r[kSpeedLower], 24.0);
}

TEST(PathConstraintsTest, DerivativesMatchFiniteDifferences) {
  const VehicleParams p = bundled_params();
  const double kappa = 0.013;
  for (const auto& [v, a] : {std::array{10.0, 0.5}, std::array{3.0, -2.0}, std::array{20.0, 3.0}}) {
    const auto d = path_constraint_derivatives({0, v, a}, p, kappa);
    const auto base = path_constraints({0, v, a}, {0.0}, p, kappa);
    const double h = 1e-6;
    for (int row = 0; row < kNumPathRows; ++row) {
      EXPECT_DOUBLE_EQ(d.value[row], base[row]);
      const double dv = (path_constraints({0, v + h, a}, {0.0}, p, kappa)[row] -
                         path_constraints({0, v - h, a}, {0.0}, p, kappa)[row]) / (2 * h);
      const double da = (path_constraints({0, v, a + h}, {0.0}, p, kappa)[row] -
                         path_constraints({0, v, a - h}, {0.0}, p, kappa)[row]) / (2 * h);
      EXPECT_NEAR(d.grad[row](0), dv, 1e-6 * std::max(1.0, std::abs(dv)));
      EXPECT_NEAR(d.grad[row](1), da, 1e-6 * std::max(1.0, std::abs(da)));
    }
    const double h2 = 1e-4;
    auto ell = [&](double vv, double aa) {
      return path_constraints({0, vv, aa}, {0.0}, p, kappa)[kFrictionEllipse];
    };
    const double dvv = (ell(v + h2, a) - 2 * ell(v, a) + ell(v - h2, a)) / (h2 * h2);
    const double daa = (ell(v, a + h2) - 2 * ell(v, a) + ell(v, a - h2)) / (h2 * h2);
    EXPECT_NEAR(d.hess[kFrictionEllipse](0, 0), dvv, 1e-5);
    EXPECT_NEAR(d.hess[kFrictionEllipse](1, 1), daa, 1e-5);
    EXPECT_EQ(d.hess[kFrictionEllipse](0, 1), 0.0);
  }
}

TEST(StageCostTest, CoastingIsFree) {
  EXPECT_EQ(stage_cost({0, 7.0, 0.0}, {0.0}, 3.0, Weights{}), 0.0);
  EXPECT_EQ(terminal_cost(12.0, 10.0), 120.0);
}

TEST(StageCostTest, DirectEvaluation) {
  EXPECT_DOUBLE_EQ(stage_cost({0, 10.0, 2.0}, {1.0}, 5.0, Weights{1, 1, 10}), 2.5);
}

TEST(StageCostTest, DerivativesMatchFiniteDifferences) {
  const Weights w{1.0, 2.0, 10.0};
  const Eigen::Vector3d x0(9.0, 0.8, -0.4);
  auto f = [&](const Eigen::Vector3d& x) { return stage_cost({0, x(0), x(1)}, {x(2)}, 4.0, w); };
  const auto d = stage_cost_derivatives({0, x0(0), x0(1)}, {x0(2)}, 4.0, w);
  EXPECT_DOUBLE_EQ(d.value, f(x0));
  const double h = 1e-5;
  for (int j = 0; j < 3; ++j) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e(j) = h;
    EXPECT_NEAR(d.grad(j), (f(x0 + e) - f(x0 - e)) / (2 * h), 1e-8);
    const Eigen::Vector3d col = [&] {
      Eigen::Vector3d c;
      for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d ek = Eigen::Vector3d::Zero();
        ek(k) = h;
        c(k) = ((f(x0 + e + ek) - f(x0 + e - ek)) - (f(x0 - e + ek) - f(x0 - e - ek))) / (4 * h * h);
      }
      return c;
    }();
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(d.hess(j, k), col(k), 1e-4);
  }
}

}  // namespace
}  // namespace sitecoord
