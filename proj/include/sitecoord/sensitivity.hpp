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

// Value function of the vehicle problem as a function of its pinned passing
// times, with first and second derivatives from the KKT system.
//
// Pins are rows t(p) = xi. With the Lagrangian f - l'(t(p) - xi) the pin
// multiplier is l = dV/dxi directly (equivalently dV/dxi = -l for the row
// xi - t(p) = 0). The Hessian comes from differentiating the KKT conditions of
// the condensed problem with the active set held fixed.

#ifndef SITECOORD_SENSITIVITY_HPP_
#define SITECOORD_SENSITIVITY_HPP_

#include <string>
#include <vector>

#include "sitecoord/common.hpp"
#include "sitecoord/nlp_core.hpp"
#include "sitecoord/schedule.hpp"
#include "sitecoord/site_model.hpp"

namespace sitecoord {

struct SensitivitySettings {
  SqpSettings sqp;
  // Inequalities with residual below this count as active.
  double activity_tolerance = 1e-6;
  // Active inequalities with a multiplier below this are degenerate.
  double degeneracy_tolerance = 1e-8;
  // Active inequalities are dropped while the row-normalized Jacobian of the
  // active set has a singular value ratio below this.
  double dependence_tolerance = 1e-6;
  double psd_floor = 1e-8;
};

struct ValueExpansion {
  std::string vehicle_id;
  std::vector<double> positions;  // parameter positions along the path
  Vec reference;                  // T0 at those positions
  double value = 0.0;
  Vec gradient;
  Mat hessian;      // symmetrized
  Mat psd_hessian;  // eigenvalues clipped at the floor
  // max |H - H'| before symmetrization.
  double asymmetry = 0.0;
  // Descriptions of weakly active or linearly dependent rows left out of the
  // active set.
  std::vector<std::string> degenerate;
  NlpSolution solution;

  // Index of the parameter at `position`, or -1.
  int parameter_index(double position) const;
};

// Eigenvalue clipping of a symmetric matrix.
Mat project_psd(const Mat& m, double floor);

// Expansion at an already solved vehicle problem (one vehicle, pins present).
ValueExpansion expand_value(const TranscribedNlp& nlp, const NlpSolution& solution,
                            const SensitivitySettings& settings = {});

// Solves the vehicle problem pinned at `reference` and expands its value.
// `guess` (optional) seeds the solve; the constant-speed guess otherwise.
// Throws SolverError if the solve is not optimal or the KKT matrix is singular.
ValueExpansion vehicle_value_and_sensitivities(const Scenario& scenario,
                                               const std::string& vehicle_id,
                                               const TimeSlotSchedule& reference,
                                               const SensitivitySettings& settings = {},
                                               const Trajectory* guess = nullptr);

}  // namespace sitecoord

#endif  // SITECOORD_SENSITIVITY_HPP_
