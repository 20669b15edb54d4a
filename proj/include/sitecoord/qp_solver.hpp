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

// Dense strictly convex quadratic programming:
//
//   min  1/2 z'Hz + g'z
//   s.t. A_eq z  = b_eq
//        A_in z >= b_in
//        lower <= z <= upper
//
// Dual active-set method of Goldfarb and Idnani: starts from the
// unconstrained minimizer and adds violated constraints one at a time while
// keeping dual feasibility, so no feasible starting point is needed and an
// infeasible problem is detected with a Farkas certificate. Callers must
// supply H >= 1e-8 I; nothing is added to H here.

#ifndef SITECOORD_QP_SOLVER_HPP_
#define SITECOORD_QP_SOLVER_HPP_

#include <optional>
#include <vector>

#include "sitecoord/common.hpp"

namespace sitecoord {

struct QuadraticProgram {
  Mat H;
  Vec g;
  Mat A_eq;
  Vec b_eq;
  Mat A_in;
  Vec b_in;
  // Empty means unbounded. Entries may be +-infinity.
  Vec lower;
  Vec upper;

  int num_variables() const { return static_cast<int>(g.size()); }
};

enum class QpStatus { kOptimal, kInfeasible, kIterLimit };

const char* to_string(QpStatus status);

// y with A'y = 0 over all constraints, y >= 0 on inequalities and b'y > 0.
// (Bounds count as rows +e_j >= lower_j and -e_j >= -upper_j.)
struct InfeasibilityCertificate {
  Vec y_eq;
  Vec y_in;
  Vec y_lower;
  Vec y_upper;
};

struct QpSolution {
  Vec z;
  Vec lambda_eq;
  Vec lambda_in;     // >= 0
  Vec lambda_lower;  // >= 0
  Vec lambda_upper;  // >= 0
  QpStatus status = QpStatus::kIterLimit;
  double kkt_residual = 0.0;
  double objective = 0.0;
  int iterations = 0;
  // Internal constraint ids in the working set at exit; used as a warm start.
  std::vector<int> active;
  std::optional<InfeasibilityCertificate> certificate;
};

struct QpSettings {
  double tolerance = 1e-8;
  // Active-set changes; 0 means 10 * (n + m).
  int max_iterations = 0;
};

// Stationarity H z + g = A_eq'l_eq + A_in'l_in + l_lower - l_upper.
QpSolution solve_qp(const QuadraticProgram& problem,
                    const QpSettings& settings = {},
                    const QpSolution* warm_start = nullptr);

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double max() const;
};

KktResiduals kkt_residuals(const QuadraticProgram& problem,
                           const QpSolution& solution);

double qp_objective(const QuadraticProgram& problem, const Vec& z);

// Checks the certificate's defining conditions; returns b'y (> 0 when valid)
// or -inf if A'y = 0 or the sign conditions fail beyond `tolerance`.
double verify_certificate(const QuadraticProgram& problem,
                          const InfeasibilityCertificate& certificate,
                          double tolerance = 1e-7);

// Throws ValidationError on inconsistent dimensions or asymmetric H.
void check_dimensions(const QuadraticProgram& problem);

}  // namespace sitecoord

#endif  // SITECOORD_QP_SOLVER_HPP_
