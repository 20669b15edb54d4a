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

namespace sitecoord {

SpatialState erk4_transition(const SpatialState& state, ControlSample control,
                             const GridCell& cell, int substeps) {
  const auto out = detail::erk4<double>(state.t, state.v, state.a, control.u,
                                        cell.p_start, cell.width(), substeps);
  return {out[0], out[1], out[2]};
}

TransitionDerivatives erk4_transition_derivatives(const SpatialState& state,
                                                  ControlSample control,
                                                  const GridCell& cell,
                                                  int substeps) {
  using J = Jet2<3>;
  const J t(state.t);
  const J v = J::variable(state.v, 0);
  const J a = J::variable(state.a, 1);
  const J u = J::variable(control.u, 2);
  const auto out = detail::erk4<J>(t, v, a, u, cell.p_start, cell.width(), substeps);
  TransitionDerivatives d;
  d.next = {out[0].value, out[1].value, out[2].value};
  for (int r = 0; r < 3; ++r) {
    d.jacobian.row(r) = out[r].grad.transpose();
    d.hessian[r] = out[r].hess;
  }
  return d;
}

std::array<double, kNumPathRows> path_constraints(const SpatialState& state,
                                                  ControlSample /*control*/,
                                                  const VehicleParams& params,
                                                  double curvature) {
  const double ra = state.a / params.a_lon_max;
  const double rl = curvature * state.v * state.v / params.a_lat_max;
  return {state.v - params.v_min, params.v_max - state.v,
          params.a_lon_max - state.a, 1.0 - ra * ra - rl * rl};
}

PathConstraintDerivatives path_constraint_derivatives(const SpatialState& state,
                                                      const VehicleParams& params,
                                                      double curvature) {
  PathConstraintDerivatives d;
  d.value = path_constraints(state, {}, params, curvature);
  d.grad[kSpeedLower] = {1.0, 0.0};
  d.grad[kSpeedUpper] = {-1.0, 0.0};
  d.grad[kAccelUpper] = {0.0, -1.0};
  const double ka = 1.0 / (params.a_lon_max * params.a_lon_max);
  const double kl = curvature * curvature / (params.a_lat_max * params.a_lat_max);
  const double v2 = state.v * state.v;
  d.grad[kFrictionEllipse] = {-4.0 * kl * v2 * state.v, -2.0 * ka * state.a};
  for (int r = 0; r < kFrictionEllipse; ++r) d.hess[r].setZero();
  d.hess[kFrictionEllipse] << -12.0 * kl * v2, 0.0, 0.0, -2.0 * ka;
  return d;
}

double stage_cost(const SpatialState& state, ControlSample control, double dp,
                  const Weights& weights) {
  return (weights.P * state.a * state.a + weights.Q * control.u * control.u) *
         dp / state.v;
}

StageCostDerivatives stage_cost_derivatives(const SpatialState& state,
                                            ControlSample control, double dp,
                                            const Weights& weights) {
  const double v = state.v;
  const double a = state.a;
  const double u = control.u;
  const double e = weights.P * a * a + weights.Q * u * u;
  StageCostDerivatives d;
  d.value = e * dp / v;
  d.grad << -e * dp / (v * v), 2.0 * weights.P * a * dp / v,
      2.0 * weights.Q * u * dp / v;
  const double v2 = v * v;
  d.hess << 2.0 * e * dp / (v2 * v), -2.0 * weights.P * a * dp / v2,
      -2.0 * weights.Q * u * dp / v2,  //
      -2.0 * weights.P * a * dp / v2, 2.0 * weights.P * dp / v, 0.0,  //
      -2.0 * weights.Q * u * dp / v2, 0.0, 2.0 * weights.Q * dp / v;
  return d;
}

}  // namespace sitecoord
