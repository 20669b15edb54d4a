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

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

namespace sitecoord {
namespace {

constexpr const char* kPathRowNames[kNumPathRows] = {"v_min", "v_max", "a_max", "ellipse"};

std::string describe_row(const TranscribedNlp& nlp, int row, int num_path_rows) {
  std::ostringstream os;
  if (row < num_path_rows) {
    int rest = row;
    for (const VehicleBlock& b : nlp.vehicles) {
      const int count = kNumPathRows * b.num_cells();
      if (rest < count) {
        const int node = rest / kNumPathRows + 1;
        os << b.vehicle_id << " " << kPathRowNames[rest % kNumPathRows] << " at p = "
           << b.grid.nodes[node];
        return os.str();
      }
      rest -= count;
    }
  }
  const CouplingRow& c = nlp.coupling[row - num_path_rows];
  os << c.zone_id << " " << to_string(c.kind) << " " << c.leader << " -> " << c.follower;
  return os.str();
}

}  // namespace

int ValueExpansion::parameter_index(double position) const {
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (std::abs(positions[i] - position) <= 1e-9) return static_cast<int>(i);
  }
  return -1;
}

Mat project_psd(const Mat& m, double floor) {
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  const Vec lam = es.eigenvalues().cwiseMax(floor);
  Mat out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

ValueExpansion expand_value(const TranscribedNlp& nlp, const NlpSolution& solution,
                            const SensitivitySettings& settings) {
  if (solution.status != NlpStatus::kOptimal) {
    throw SolverError("vehicle problem not solved to optimality (" +
                      std::string(to_string(solution.status)) + ")");
  }
  if (nlp.vehicles.size() != 1) throw Error("expand_value: expects one vehicle");
  ValueExpansion ex;
  ex.vehicle_id = nlp.vehicles[0].vehicle_id;
  ex.value = solution.objective;
  ex.solution = solution;
  const int np = static_cast<int>(nlp.pins.size());
  ex.reference = Vec(np);
  ex.gradient = solution.multipliers.pins;
  for (int i = 0; i < np; ++i) {
    ex.positions.push_back(nlp.pins[i].position);
    ex.reference(i) = nlp.pins[i].value;
  }
  if (np == 0) {
    ex.hessian = ex.psd_hessian = Mat(0, 0);
    return ex;
  }

  const CondensedModel cm = condense(nlp, solution.z, solution.multipliers, false);
  const QuadraticProgram& qp = cm.qp;
  const int nu = qp.num_variables();

  // Active set: all pins, then strongly active inequalities.
  std::vector<int> active;
  const Vec& mu_path = solution.multipliers.path;
  const Vec& mu_coupling = solution.multipliers.coupling;
  for (int i = 0; i < qp.A_in.rows(); ++i) {
    const double g = -qp.b_in(i);  // residual at du = 0 (defects are closed)
    const double mu = i < cm.num_path_rows ? mu_path(i) : mu_coupling(i - cm.num_path_rows);
    if (mu > settings.degeneracy_tolerance) {
      active.push_back(i);
    } else if (std::abs(g) <= settings.activity_tolerance) {
      ex.degenerate.push_back(describe_row(nlp, i, cm.num_path_rows));
    }
  }

  // Row-normalized constraint Jacobian; near dependencies are broken by
  // dropping the inequality that carries most weight in the smallest left
  // singular vector.
  auto stack = [&](const std::vector<int>& rows) {
    Mat C(np + static_cast<int>(rows.size()), nu);
    C.topRows(np) = qp.A_eq;
    for (std::size_t i = 0; i < rows.size(); ++i) C.row(np + i) = qp.A_in.row(rows[i]);
    for (int i = 0; i < C.rows(); ++i) C.row(i) /= C.row(i).norm();
    return C;
  };
  Mat C = stack(active);
  int dependent = 0;
  while (!active.empty()) {
    Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullU);
    const Vec& sv = svd.singularValues();
    if (sv(sv.size() - 1) > settings.dependence_tolerance * sv(0)) break;
    const Vec y = svd.matrixU().col(sv.size() - 1).tail(active.size());
    int drop = 0;
    y.cwiseAbs().maxCoeff(&drop);
    ex.degenerate.push_back(describe_row(nlp, active[drop], cm.num_path_rows) + " (dependent)");
    active.erase(active.begin() + drop);
    ++dependent;
    C = stack(active);
  }
  const int na = static_cast<int>(active.size());
  const int m = np + na;
  Vec scale(m);
  for (int i = 0; i < np; ++i) scale(i) = 1.0 / qp.A_eq.row(i).norm();
  for (int i = 0; i < na; ++i) scale(np + i) = 1.0 / qp.A_in.row(active[i]).norm();

  // Null-space solve of
  //   [H  -A'] [du]   [0]
  //   [A   0 ] [dl] = [E]   with E selecting the pin rows,
  // using C = D A = R' Q1' and the reduced Hessian Q2' H Q2.
  Eigen::HouseholderQR<Mat> qr(C.transpose());
  const Mat Q = qr.householderQ() * Mat::Identity(nu, nu);
  const Mat R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  const Mat Q1 = Q.leftCols(m);
  const Mat Q2 = Q.rightCols(nu - m);
  if (R.diagonal().cwiseAbs().minCoeff() <= 1e-12 * R.diagonal().cwiseAbs().maxCoeff()) {
    throw SolverError("sensitivity: active constraints of '" + ex.vehicle_id +
                      "' are linearly dependent");
  }
  Mat E = Mat::Zero(m, np);
  E.topRows(np) = scale.head(np).asDiagonal();
  const Mat du_range =
      Q1 * R.transpose().triangularView<Eigen::Lower>().solve(E);  // C du = D E
  Mat du = du_range;
  if (nu > m) {
    const Mat Hr = Q2.transpose() * qp.H * Q2;
    Eigen::LLT<Mat> llt(0.5 * (Hr + Hr.transpose()));
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "sensitivity: reduced Hessian of '" << ex.vehicle_id << "' is not positive definite ("
         << na << " active inequalities); perturb the reference times and retry";
      throw SolverError(os.str());
    }
    du -= Q2 * llt.solve(Q2.transpose() * qp.H * du_range);
  }
  // C' (D^-1 dl) = H du, so the pin multipliers are D times the first rows.
  const Mat dl = R.triangularView<Eigen::Upper>().solve(Q1.transpose() * qp.H * du);
  const Mat raw = scale.head(np).asDiagonal() * dl.topRows(np);
  ex.asymmetry = (raw - raw.transpose()).cwiseAbs().maxCoeff();
  ex.hessian = 0.5 * (raw + raw.transpose());
  ex.psd_hessian = project_psd(ex.hessian, settings.psd_floor);
  if (!ex.degenerate.empty()) {
    spdlog::warn("sensitivity '{}': {} weakly active rows treated as inactive, {} of them "
                 "dependent (first: {})",
                 ex.vehicle_id, ex.degenerate.size(), dependent, ex.degenerate.front());
  }
  return ex;
}

ValueExpansion vehicle_value_and_sensitivities(const Scenario& scenario,
                                               const std::string& vehicle_id,
                                               const TimeSlotSchedule& reference,
                                               const SensitivitySettings& settings,
                                               const Trajectory* guess) {
  const TranscribedNlp nlp = transcribe(scenario, {vehicle_id}, nullptr, &reference);
  const Trajectory start = guess != nullptr ? *guess : initial_guess_from(nlp.vehicles[0]);
  const NlpSolution sol = solve_sqp(nlp, {start}, settings.sqp);
  if (sol.status != NlpStatus::kOptimal) {
    throw SolverError("vehicle problem of '" + vehicle_id + "' ended " +
                      to_string(sol.status));
  }
  return expand_value(nlp, sol, settings);
}

}  // namespace sitecoord
