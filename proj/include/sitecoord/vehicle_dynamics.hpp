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

// Spatial-domain triple integrator. Position p along the path is the
// independent variable; the state is (t, v, a) and the control is the jerk u,
// held constant over each grid cell:
//
//   dt/dp = 1/v,   dv/dp = a/v,   da/dp = u/v.

#ifndef SITECOORD_VEHICLE_DYNAMICS_HPP_
#define SITECOORD_VEHICLE_DYNAMICS_HPP_

#include <array>

#include <Eigen/Core>

#include "sitecoord/common.hpp"
#include "sitecoord/jet.hpp"
#include "sitecoord/site_model.hpp"

namespace sitecoord {

struct SpatialState {
  double t = 0.0;
  double v = 1.0;
  double a = 0.0;
};

struct ControlSample {
  double u = 0.0;
};

struct GridCell {
  double p_start = 0.0;
  double p_end = 0.0;
  // Curvature at p_start, midpoint and p_end (the ERK4 stage abscissae).
  std::array<double, 3> curvature{};

  double width() const { return p_end - p_start; }
};

// The integrator throws SingularityError if any stage speed drops below this.
inline constexpr double kIntegratorSpeedFloor = 0.1;

namespace detail {

// (t, v, a) advanced over [p0, p0 + h] by `substeps` classic RK4 steps.
template <class T>
std::array<T, 3> erk4(T t, T v, T a, const T& u, double p0, double h,
                      int substeps) {
  const double dh = h / substeps;
  auto rhs = [&](const T& vs, const T& as, double p) -> std::array<T, 3> {
    if (!(value_of(vs) >= kIntegratorSpeedFloor)) {
      throw SingularityError(p, value_of(vs));
    }
    const T inv = reciprocal(vs);
    return {inv, as * inv, u * inv};
  };
  for (int s = 0; s < substeps; ++s) {
    const double p = p0 + s * dh;
    const auto k1 = rhs(v, a, p);
    const auto k2 = rhs(v + (0.5 * dh) * k1[1], a + (0.5 * dh) * k1[2], p + 0.5 * dh);
    const auto k3 = rhs(v + (0.5 * dh) * k2[1], a + (0.5 * dh) * k2[2], p + 0.5 * dh);
    const auto k4 = rhs(v + dh * k3[1], a + dh * k3[2], p + dh);
    const double w = dh / 6.0;
    t = t + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
    v = v + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    a = a + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]);
  }
  return {t, v, a};
}

}  // namespace detail

SpatialState erk4_transition(const SpatialState& state, ControlSample control,
                             const GridCell& cell, int substeps = 1);

// Transition plus exact first and second derivatives with respect to
// (v, a, u) at the cell start. t enters additively: d t_next / d t = 1.
struct TransitionDerivatives {
  SpatialState next;
  Eigen::Matrix3d jacobian;               // rows t, v, a; cols v, a, u
  std::array<Eigen::Matrix3d, 3> hessian; // one per output row
};

TransitionDerivatives erk4_transition_derivatives(const SpatialState& state,
                                                  ControlSample control,
                                                  const GridCell& cell,
                                                  int substeps = 1);

enum PathRow {
  kSpeedLower = 0,
  kSpeedUpper = 1,
  kAccelUpper = 2,
  kFrictionEllipse = 3,
  kNumPathRows = 4,
};

// Residuals, each >= 0 when feasible:
//   v - v_min, v_max - v, a_lon_max - a,
//   1 - (a / a_lon_max)^2 - (curvature v^2 / a_lat_max)^2,
// the last one being the friction ellipse with lateral acceleration kappa v^2.
std::array<double, kNumPathRows> path_constraints(const SpatialState& state,
                                                  ControlSample control,
                                                  const VehicleParams& params,
                                                  double curvature);

struct PathConstraintDerivatives {
  std::array<double, kNumPathRows> value{};
  std::array<Eigen::Vector2d, kNumPathRows> grad;  // wrt (v, a)
  std::array<Eigen::Matrix2d, kNumPathRows> hess;  // wrt (v, a)
};

PathConstraintDerivatives path_constraint_derivatives(const SpatialState& state,
                                                      const VehicleParams& params,
                                                      double curvature);

// (P a^2 + Q u^2) * dp / v, the forward-Euler objective increment of a cell.
double stage_cost(const SpatialState& state, ControlSample control, double dp,
                  const Weights& weights);

struct StageCostDerivatives {
  double value = 0.0;
  Eigen::Vector3d grad;  // wrt (v, a, u)
  Eigen::Matrix3d hess;
};

StageCostDerivatives stage_cost_derivatives(const SpatialState& state,
                                            ControlSample control, double dp,
                                            const Weights& weights);

inline double terminal_cost(double t_final, double R) { return R * t_final; }

}  // namespace sitecoord

#endif  // SITECOORD_VEHICLE_DYNAMICS_HPP_
