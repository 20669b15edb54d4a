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
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

namespace sitecoord {
namespace {

constexpr double kPositionTolerance = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

SpatialState state_at(const VehicleBlock& b, const Vec& z, int k) {
  return {z(b.t(k)), z(b.v(k)), z(b.a(k))};
}

// Terms of t(position) for a vehicle, linear in the node times.
std::vector<TimeTerm> time_terms(const TranscribedNlp& nlp, int slot, double position,
                                 double sign) {
  const VehicleGrid& g = nlp.vehicles[slot].grid;
  const int exact = g.node_index(position);
  if (exact >= 0) return {{slot, exact, sign}};
  const auto it = std::upper_bound(g.nodes.begin(), g.nodes.end(), position);
  if (it == g.nodes.begin() || it == g.nodes.end()) {
    std::ostringstream os;
    os << "position " << position << " outside the grid of '" << nlp.vehicles[slot].vehicle_id
       << "'";
    throw Error(os.str());
  }
  const int hi = static_cast<int>(it - g.nodes.begin());
  const int lo = hi - 1;
  const double w = (position - g.nodes[lo]) / (g.nodes[hi] - g.nodes[lo]);
  return {{slot, lo, sign * (1.0 - w)}, {slot, hi, sign * w}};
}

struct VehicleEval {
  std::vector<TransitionDerivatives> trans;
  std::vector<Eigen::Vector3d> defect;          // F_k - x_{k+1}
  std::vector<PathConstraintDerivatives> path;  // node k at index k - 1
  std::vector<StageCostDerivatives> cost;
};

std::vector<VehicleEval> evaluate(const TranscribedNlp& nlp, const Vec& z) {
  std::vector<VehicleEval> out(nlp.vehicles.size());
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    VehicleEval& e = out[s];
    const int n = b.num_cells();
    e.trans.reserve(n);
    e.defect.reserve(n);
    e.cost.reserve(n);
    e.path.reserve(n);
    for (int k = 0; k < n; ++k) {
      const SpatialState x = state_at(b, z, k);
      const ControlSample u{z(b.u(k))};
      e.trans.push_back(erk4_transition_derivatives(x, u, b.grid.cells[k], nlp.substeps));
      const SpatialState& f = e.trans.back().next;
      e.defect.emplace_back(f.t - z(b.t(k + 1)), f.v - z(b.v(k + 1)), f.a - z(b.a(k + 1)));
      e.cost.push_back(stage_cost_derivatives(x, u, b.grid.cells[k].width(), b.params.weights));
    }
    for (int k = 1; k <= n; ++k) {
      e.path.push_back(path_constraint_derivatives(state_at(b, z, k), b.params,
                                                   b.node_curvature[k]));
    }
  }
  return out;
}

Eigen::Matrix3d state_jacobian(const TransitionDerivatives& d) {
  Eigen::Matrix3d A;
  A << 1.0, d.jacobian(0, 0), d.jacobian(0, 1),
       0.0, d.jacobian(1, 0), d.jacobian(1, 1),
       0.0, d.jacobian(2, 0), d.jacobian(2, 1);
  return A;
}

struct Offsets {
  std::vector<int> defect;
  std::vector<int> path;
};

Offsets row_offsets(const TranscribedNlp& nlp) {
  Offsets o;
  int d = 0;
  int p = 0;
  for (const VehicleBlock& b : nlp.vehicles) {
    o.defect.push_back(d);
    o.path.push_back(p);
    d += 3 * b.num_cells();
    p += kNumPathRows * b.num_cells();
  }
  return o;
}

Vec objective_gradient(const TranscribedNlp& nlp, const std::vector<VehicleEval>& ev) {
  Vec g = Vec::Zero(nlp.num_variables);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    for (int k = 0; k < b.num_cells(); ++k) {
      const auto& c = ev[s].cost[k];
      g(b.v(k)) += c.grad(0);
      g(b.a(k)) += c.grad(1);
      g(b.u(k)) += c.grad(2);
    }
    g(b.t(b.num_cells())) += b.params.weights.R;
  }
  return g;
}

// Sum over rows of multiplier times row gradient (path, pins, coupling).
Vec constraint_side(const TranscribedNlp& nlp, const std::vector<VehicleEval>& ev,
                    const NlpMultipliers& m, const Offsets& off) {
  Vec out = Vec::Zero(nlp.num_variables);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    for (int k = 1; k <= b.num_cells(); ++k) {
      for (int r = 0; r < kNumPathRows; ++r) {
        const double mu = m.path(off.path[s] + kNumPathRows * (k - 1) + r);
        if (mu == 0.0) continue;
        out(b.v(k)) += mu * ev[s].path[k - 1].grad[r](0);
        out(b.a(k)) += mu * ev[s].path[k - 1].grad[r](1);
      }
    }
  }
  for (std::size_t i = 0; i < nlp.pins.size(); ++i) {
    const PinRow& p = nlp.pins[i];
    out(nlp.vehicles[p.vehicle].t(p.node)) += m.pins(i);
  }
  for (std::size_t i = 0; i < nlp.coupling.size(); ++i) {
    for (const TimeTerm& term : nlp.coupling[i].terms) {
      out(nlp.vehicles[term.vehicle].t(term.node)) += m.coupling(i) * term.coef;
    }
  }
  return out;
}

// Backward solve of the state stationarity conditions
//   grad_{x_j} f - lambda_{j-1} + A_j' lambda_j - (row terms)_{x_j} = 0
// for the defect multipliers (rows x_{k+1} - F_k = 0).
Vec recover_defect_multipliers(const TranscribedNlp& nlp, const std::vector<VehicleEval>& ev,
                               const Vec& grad, const Vec& side, const Offsets& off) {
  Vec lam = Vec::Zero(nlp.num_defect_rows());
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    const int n = b.num_cells();
    Eigen::Vector3d next = Eigen::Vector3d::Zero();
    for (int j = n; j >= 1; --j) {
      Eigen::Vector3d rhs(grad(b.t(j)) - side(b.t(j)), grad(b.v(j)) - side(b.v(j)),
                          grad(b.a(j)) - side(b.a(j)));
      if (j < n) rhs += state_jacobian(ev[s].trans[j]).transpose() * next;
      lam.segment<3>(off.defect[s] + 3 * (j - 1)) = rhs;
      next = rhs;
    }
  }
  return lam;
}

// d L / d u_k = grad_u f + B_k' lambda_k.
Vec reduced_gradient(const TranscribedNlp& nlp, const std::vector<VehicleEval>& ev,
                     const Vec& grad, const Vec& lam, const Offsets& off) {
  Vec r(nlp.num_controls);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    for (int k = 0; k < b.num_cells(); ++k) {
      const Eigen::Vector3d B = ev[s].trans[k].jacobian.col(2);
      r(b.control_offset + k) =
          grad(b.u(k)) + B.dot(lam.segment<3>(off.defect[s] + 3 * k));
    }
  }
  return r;
}

template <int D>
Eigen::Matrix<double, D, D> clip_eigenvalues(const Eigen::Matrix<double, D, D>& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> es(0.5 * (m + m.transpose()));
  Eigen::Matrix<double, D, 1> ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Lagrangian Hessian blocks: (v_k, a_k, u_k) per cell and (v_N, a_N).
struct HessianBlocks {
  std::vector<std::vector<Eigen::Matrix3d>> cell;
  std::vector<Eigen::Matrix2d> last;
};

// kGaussNewton keeps the objective curvature, including the travel-time
// integral through the t-defect multipliers, and drops the curvature of the
// v and a dynamics rows.
HessianBlocks lagrangian_blocks(const TranscribedNlp& nlp, const std::vector<VehicleEval>& ev,
                                const NlpMultipliers& m, const Offsets& off, HessianMode mode,
                                bool project, double floor) {
  HessianBlocks h;
  h.cell.resize(nlp.vehicles.size());
  h.last.resize(nlp.vehicles.size());
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    const int n = b.num_cells();
    auto path_hess = [&](int k) {
      Eigen::Matrix2d out = Eigen::Matrix2d::Zero();
      for (int r = 0; r < kNumPathRows; ++r) {
        out -= m.path(off.path[s] + kNumPathRows * (k - 1) + r) * ev[s].path[k - 1].hess[r];
      }
      return out;
    };
    h.cell[s].resize(n);
    for (int k = 0; k < n; ++k) {
      Eigen::Matrix3d blk = ev[s].cost[k].hess;
      const int rows = mode == HessianMode::kExact ? 3 : 1;
      for (int r = 0; r < rows; ++r) {
        blk += m.defects(off.defect[s] + 3 * k + r) * ev[s].trans[k].hessian[r];
      }
      if (k >= 1) blk.topLeftCorner<2, 2>() += path_hess(k);
      h.cell[s][k] = project ? clip_eigenvalues<3>(blk, floor) : blk;
    }
    const Eigen::Matrix2d last = path_hess(n);
    h.last[s] = project ? clip_eigenvalues<2>(last, floor) : last;
  }
  return h;
}

bool positive_definite(const Mat& H, double floor) {
  Eigen::LLT<Mat> llt(H - floor * Mat::Identity(H.rows(), H.cols()));
  return llt.info() == Eigen::Success;
}

// Makes the reduced Hessian positive definite while keeping it exact on the
// manifold of the rows expected to be active (pins and inequalities with a
// positive multiplier): 1/2 rho |A du - b|^2 is added for those rows, which
// leaves the QP solution unchanged when they stay active. Eigenvalue clipping
// is the fallback.
void convexify(CondensedModel& cm, const NlpMultipliers& m, double floor) {
  QuadraticProgram& qp = cm.qp;
  if (qp.H.rows() == 0 || positive_definite(qp.H, floor)) return;
  std::vector<int> rows;
  for (int i = 0; i < qp.A_in.rows(); ++i) {
    const double mu = i < cm.num_path_rows ? m.path(i) : m.coupling(i - cm.num_path_rows);
    if (mu > 0.0) rows.push_back(i);
  }
  const int na = static_cast<int>(qp.A_eq.rows()) + static_cast<int>(rows.size());
  if (na > 0) {
    Mat A(na, qp.H.cols());
    Vec b(na);
    A.topRows(qp.A_eq.rows()) = qp.A_eq;
    b.head(qp.A_eq.rows()) = qp.b_eq;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      A.row(qp.A_eq.rows() + i) = qp.A_in.row(rows[i]);
      b(qp.A_eq.rows() + i) = qp.b_in(rows[i]);
    }
    const Mat AtA = A.transpose() * A;
    const double scale = std::max(1.0, qp.H.diagonal().cwiseAbs().maxCoeff()) /
                         std::max(1e-12, AtA.diagonal().maxCoeff());
    for (double rho = scale; rho <= 1e8 * scale; rho *= 10.0) {
      const Mat trial = qp.H + rho * AtA;
      if (positive_definite(trial, floor)) {
        qp.H = 0.5 * (trial + trial.transpose());
        qp.g -= rho * A.transpose() * b;
        return;
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(qp.H);
  const Vec lam = es.eigenvalues().cwiseMax(floor);
  qp.H = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  qp.H = 0.5 * (qp.H + qp.H.transpose());
}

CondensedModel build_condensed(const TranscribedNlp& nlp, const Vec& z,
                               const std::vector<VehicleEval>& ev, const NlpMultipliers& m,
                               HessianMode mode, bool project, double floor) {
  const Offsets off = row_offsets(nlp);
  const int nz = nlp.num_variables;
  const int nu = nlp.num_controls;
  CondensedModel cm;
  cm.W = Mat::Zero(nz, nu);
  cm.w = Vec::Zero(nz);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    const int n = b.num_cells();
    const int c0 = b.control_offset;
    for (int k = 0; k < n; ++k) {
      const Eigen::Matrix3d A = state_jacobian(ev[s].trans[k]);
      const int rk = b.t(k);
      const int rn = b.t(k + 1);
      cm.W.block(rn, c0, 3, k) = A * cm.W.block(rk, c0, 3, k);
      cm.W.block(rn, c0 + k, 3, 1) = ev[s].trans[k].jacobian.col(2);
      cm.w.segment<3>(rn) = A * cm.w.segment<3>(rk) + ev[s].defect[k];
      cm.W(b.u(k), c0 + k) = 1.0;
    }
  }

  // Gauss-Newton blocks are projected one by one; the exact Hessian is
  // projected after condensing, per vehicle, where it is the reduced Hessian.
  const bool block_projection = project && mode == HessianMode::kGaussNewton;
  const HessianBlocks hb = lagrangian_blocks(nlp, ev, m, off, mode, block_projection, floor);
  Mat H = Mat::Zero(nu, nu);
  Vec y = objective_gradient(nlp, ev);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    const int n = b.num_cells();
    const int c0 = b.control_offset;
    auto accumulate = [&](const int* rows, int count, const Eigen::MatrixXd& blk) {
      Mat M(count, n);
      Vec wr(count);
      for (int i = 0; i < count; ++i) {
        M.row(i) = cm.W.block(rows[i], c0, 1, n);
        wr(i) = cm.w(rows[i]);
      }
      H.block(c0, c0, n, n).noalias() += M.transpose() * blk * M;
      const Vec bw = blk * wr;
      for (int i = 0; i < count; ++i) y(rows[i]) += bw(i);
    };
    for (int k = 0; k < n; ++k) {
      const int rows[3] = {b.v(k), b.a(k), b.u(k)};
      accumulate(rows, 3, hb.cell[s][k]);
    }
    const int rows[2] = {b.v(n), b.a(n)};
    accumulate(rows, 2, hb.last[s]);
  }
  cm.qp.H = 0.5 * (H + H.transpose());
  cm.qp.g = cm.W.transpose() * y;

  cm.num_path_rows = nlp.num_path_rows();
  const int m_in = cm.num_path_rows + static_cast<int>(nlp.coupling.size());
  cm.qp.A_in = Mat::Zero(m_in, nu);
  cm.qp.b_in = Vec::Zero(m_in);
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    const int n = b.num_cells();
    const int c0 = b.control_offset;
    for (int k = 1; k <= n; ++k) {
      const PathConstraintDerivatives& pd = ev[s].path[k - 1];
      for (int r = 0; r < kNumPathRows; ++r) {
        const int row = off.path[s] + kNumPathRows * (k - 1) + r;
        const double gv = pd.grad[r](0);
        const double ga = pd.grad[r](1);
        cm.qp.A_in.block(row, c0, 1, n) =
            gv * cm.W.block(b.v(k), c0, 1, n) + ga * cm.W.block(b.a(k), c0, 1, n);
        cm.qp.b_in(row) = -pd.value[r] - gv * cm.w(b.v(k)) - ga * cm.w(b.a(k));
      }
    }
  }
  for (std::size_t i = 0; i < nlp.coupling.size(); ++i) {
    const int row = cm.num_path_rows + static_cast<int>(i);
    double rhs = nlp.coupling[i].rhs;
    for (const TimeTerm& term : nlp.coupling[i].terms) {
      const int idx = nlp.vehicles[term.vehicle].t(term.node);
      cm.qp.A_in.row(row) += term.coef * cm.W.row(idx);
      rhs -= term.coef * (z(idx) + cm.w(idx));
    }
    cm.qp.b_in(row) = rhs;
  }
  cm.qp.A_eq = Mat::Zero(static_cast<int>(nlp.pins.size()), nu);
  cm.qp.b_eq = Vec::Zero(static_cast<int>(nlp.pins.size()));
  for (std::size_t i = 0; i < nlp.pins.size(); ++i) {
    const int idx = nlp.vehicles[nlp.pins[i].vehicle].t(nlp.pins[i].node);
    cm.qp.A_eq.row(i) = cm.W.row(idx);
    cm.qp.b_eq(i) = nlp.pins[i].value - z(idx) - cm.w(idx);
  }
  if (project && mode == HessianMode::kExact) convexify(cm, m, floor);
  return cm;
}

NlpMultipliers zero_multipliers(const TranscribedNlp& nlp) {
  NlpMultipliers m;
  m.defects = Vec::Zero(nlp.num_defect_rows());
  m.path = Vec::Zero(nlp.num_path_rows());
  m.pins = Vec::Zero(static_cast<int>(nlp.pins.size()));
  m.coupling = Vec::Zero(static_cast<int>(nlp.coupling.size()));
  return m;
}

double coupling_residual(const TranscribedNlp& nlp, const CouplingRow& row, const Vec& z) {
  double lhs = 0.0;
  for (const TimeTerm& term : row.terms) lhs += term.coef * z(nlp.vehicles[term.vehicle].t(term.node));
  return lhs - row.rhs;
}

// L1 infeasibility and objective at a point, without derivatives.
struct MeritTerms {
  double objective = 0.0;
  double infeasibility = 0.0;
};

MeritTerms merit_terms(const TranscribedNlp& nlp, const Vec& z) {
  MeritTerms mt;
  for (const VehicleBlock& b : nlp.vehicles) {
    for (int k = 0; k < b.num_cells(); ++k) {
      const SpatialState x = state_at(b, z, k);
      const ControlSample u{z(b.u(k))};
      const SpatialState f = erk4_transition(x, u, b.grid.cells[k], nlp.substeps);
      mt.infeasibility += std::abs(f.t - z(b.t(k + 1))) + std::abs(f.v - z(b.v(k + 1))) +
                          std::abs(f.a - z(b.a(k + 1)));
      mt.objective += stage_cost(x, u, b.grid.cells[k].width(), b.params.weights);
      const auto g = path_constraints(state_at(b, z, k + 1), u, b.params, b.node_curvature[k + 1]);
      for (double r : g) mt.infeasibility += std::max(0.0, -r);
    }
    mt.objective += terminal_cost(z(b.t(b.num_cells())), b.params.weights.R);
  }
  for (const PinRow& p : nlp.pins) {
    mt.infeasibility += std::abs(z(nlp.vehicles[p.vehicle].t(p.node)) - p.value);
  }
  for (const CouplingRow& row : nlp.coupling) {
    mt.infeasibility += std::max(0.0, -coupling_residual(nlp, row, z));
  }
  return mt;
}

struct KktReport {
  double stationarity = 0.0;
  double defect = 0.0;
  double violation = 0.0;
  double complementarity = 0.0;
};

KktReport kkt_report(const TranscribedNlp& nlp, const Vec& z, const std::vector<VehicleEval>& ev,
                     NlpMultipliers& m) {
  const Offsets off = row_offsets(nlp);
  const Vec grad = objective_gradient(nlp, ev);
  const Vec side = constraint_side(nlp, ev, m, off);
  m.defects = recover_defect_multipliers(nlp, ev, grad, side, off);
  KktReport r;
  const Vec red = reduced_gradient(nlp, ev, grad, m.defects, off);
  r.stationarity = red.size() > 0 ? red.cwiseAbs().maxCoeff() : 0.0;
  for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
    const VehicleBlock& b = nlp.vehicles[s];
    for (int k = 0; k < b.num_cells(); ++k) {
      r.defect = std::max(r.defect, ev[s].defect[k].cwiseAbs().maxCoeff());
    }
    for (int k = 1; k <= b.num_cells(); ++k) {
      for (int row = 0; row < kNumPathRows; ++row) {
        const double g = ev[s].path[k - 1].value[row];
        const double mu = m.path(off.path[s] + kNumPathRows * (k - 1) + row);
        r.violation = std::max(r.violation, -g);
        r.complementarity = std::max(r.complementarity, std::abs(mu * g));
      }
    }
  }
  for (std::size_t i = 0; i < nlp.pins.size(); ++i) {
    const PinRow& p = nlp.pins[i];
    r.violation = std::max(r.violation, std::abs(z(nlp.vehicles[p.vehicle].t(p.node)) - p.value));
  }
  for (std::size_t i = 0; i < nlp.coupling.size(); ++i) {
    const double g = coupling_residual(nlp, nlp.coupling[i], z);
    r.violation = std::max(r.violation, -g);
    r.complementarity = std::max(r.complementarity, std::abs(m.coupling(i) * g));
  }
  return r;
}

double max_abs(const Vec& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }

// Adds nonnegative slacks to pins (two each) and coupling rows, with a large
// linear penalty, so the QP is always feasible when the path rows are.
QuadraticProgram elastic(const CondensedModel& cm, double penalty, int* num_slacks) {
  const QuadraticProgram& qp = cm.qp;
  const int nu = qp.num_variables();
  const int np = static_cast<int>(qp.A_eq.rows());
  const int nc = static_cast<int>(qp.A_in.rows()) - cm.num_path_rows;
  const int ns = 2 * np + nc;
  const int n = nu + ns;
  QuadraticProgram e;
  e.H = Mat::Zero(n, n);
  e.H.topLeftCorner(nu, nu) = qp.H;
  e.H.bottomRightCorner(ns, ns) = Mat::Identity(ns, ns);
  e.g = Vec::Constant(n, penalty);
  e.g.head(nu) = qp.g;
  e.A_eq = Mat::Zero(np, n);
  e.A_eq.leftCols(nu) = qp.A_eq;
  for (int i = 0; i < np; ++i) {
    e.A_eq(i, nu + 2 * i) = 1.0;
    e.A_eq(i, nu + 2 * i + 1) = -1.0;
  }
  e.b_eq = qp.b_eq;
  e.A_in = Mat::Zero(qp.A_in.rows(), n);
  e.A_in.leftCols(nu) = qp.A_in;
  for (int i = 0; i < nc; ++i) e.A_in(cm.num_path_rows + i, nu + 2 * np + i) = 1.0;
  e.b_in = qp.b_in;
  e.lower = Vec::Constant(n, -kInf);
  e.lower.tail(ns).setZero();
  *num_slacks = ns;
  return e;
}

}  // namespace

int VehicleGrid::node_index(double position) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), position - kPositionTolerance);
  if (it != nodes.end() && std::abs(*it - position) <= kPositionTolerance) {
    return static_cast<int>(it - nodes.begin());
  }
  return -1;
}

VehicleGrid make_vehicle_grid(const Path& path, int base_cells,
                              const std::vector<double>& required) {
  if (base_cells < 1) throw ValidationError("grid.N", "must be positive");
  const double length = path.length();
  const double dp = length / base_cells;
  std::vector<double> nodes;
  for (int i = 0; i <= base_cells; ++i) {
    const double p = i == base_cells ? length : i * dp;
    bool keep = i == 0 || i == base_cells;
    if (!keep) {
      keep = std::none_of(required.begin(), required.end(),
                          [&](double q) { return std::abs(q - p) < 0.1 * dp; });
    }
    if (keep) nodes.push_back(p);
  }
  for (double q : required) {
    if (q > 0.0 && q < length) nodes.push_back(q);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [](double a, double b) { return std::abs(a - b) <= kPositionTolerance; }),
              nodes.end());
  nodes.back() = length;
  VehicleGrid g;
  g.nodes = nodes;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double p0 = nodes[k];
    const double p1 = nodes[k + 1];
    g.cells.push_back(GridCell{p0, p1,
                               {path.curvature_at(p0), path.curvature_at(0.5 * (p0 + p1)),
                                path.curvature_at(p1)}});
  }
  return g;
}

double Trajectory::time_at(double position) const {
  if (position <= grid.front()) return t.front();
  if (position >= grid.back()) return t.back();
  const auto it = std::upper_bound(grid.begin(), grid.end(), position);
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  const std::size_t lo = hi - 1;
  const double w = (position - grid[lo]) / (grid[hi] - grid[lo]);
  return (1.0 - w) * t[lo] + w * t[hi];
}

const char* to_string(CouplingKind kind) {
  switch (kind) {
    case CouplingKind::kIntersection:
      return "intersection";
    case CouplingKind::kMergeEntry:
      return "merge_entry";
    case CouplingKind::kMergeInterior:
      return "merge_interior";
    case CouplingKind::kMergeExit:
      return "merge_exit";
  }
  return "unknown";
}

const char* to_string(NlpStatus status) {
  switch (status) {
    case NlpStatus::kOptimal:
      return "optimal";
    case NlpStatus::kMaxIter:
      return "max_iterations";
    case NlpStatus::kInfeasible:
      return "infeasible";
  }
  return "unknown";
}

int TranscribedNlp::num_defect_rows() const {
  int n = 0;
  for (const VehicleBlock& b : vehicles) n += 3 * b.num_cells();
  return n;
}

int TranscribedNlp::num_path_rows() const {
  int n = 0;
  for (const VehicleBlock& b : vehicles) n += kNumPathRows * b.num_cells();
  return n;
}

int TranscribedNlp::vehicle_slot(const std::string& vehicle_id) const {
  for (std::size_t s = 0; s < vehicles.size(); ++s) {
    if (vehicles[s].vehicle_id == vehicle_id) return static_cast<int>(s);
  }
  return -1;
}

Vec TranscribedNlp::pack(const std::vector<Trajectory>& trajectories) const {
  if (trajectories.size() != vehicles.size()) {
    throw Error("pack: expected one trajectory per vehicle");
  }
  Vec z(num_variables);
  for (std::size_t s = 0; s < vehicles.size(); ++s) {
    const VehicleBlock& b = vehicles[s];
    const Trajectory& tr = trajectories[s];
    if (static_cast<int>(tr.t.size()) != b.num_nodes() ||
        static_cast<int>(tr.u.size()) != b.num_cells()) {
      throw Error("pack: trajectory of '" + tr.vehicle_id + "' does not match the grid");
    }
    for (int k = 0; k < b.num_nodes(); ++k) {
      z(b.t(k)) = tr.t[k];
      z(b.v(k)) = tr.v[k];
      z(b.a(k)) = tr.a[k];
    }
    for (int k = 0; k < b.num_cells(); ++k) z(b.u(k)) = tr.u[k];
  }
  return z;
}

std::vector<Trajectory> TranscribedNlp::unpack(const Vec& z) const {
  std::vector<Trajectory> out;
  for (const VehicleBlock& b : vehicles) {
    Trajectory tr;
    tr.vehicle_id = b.vehicle_id;
    tr.grid = b.grid.nodes;
    for (int k = 0; k < b.num_nodes(); ++k) {
      tr.t.push_back(z(b.t(k)));
      tr.v.push_back(z(b.v(k)));
      tr.a.push_back(z(b.a(k)));
    }
    for (int k = 0; k < b.num_cells(); ++k) tr.u.push_back(z(b.u(k)));
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<double> TranscribedNlp::vehicle_objectives(const Vec& z) const {
  std::vector<double> out;
  for (const VehicleBlock& b : vehicles) {
    double j = 0.0;
    for (int k = 0; k < b.num_cells(); ++k) {
      j += stage_cost(state_at(b, z, k), {z(b.u(k))}, b.grid.cells[k].width(), b.params.weights);
    }
    out.push_back(j + terminal_cost(z(b.t(b.num_cells())), b.params.weights.R));
  }
  return out;
}

double TranscribedNlp::objective(const Vec& z) const {
  double j = 0.0;
  for (double v : vehicle_objectives(z)) j += v;
  return j;
}

double TranscribedNlp::max_defect(const Vec& z) const {
  double d = 0.0;
  for (const VehicleBlock& b : vehicles) {
    for (int k = 0; k < b.num_cells(); ++k) {
      const SpatialState f = erk4_transition(state_at(b, z, k), {z(b.u(k))}, b.grid.cells[k], substeps);
      d = std::max({d, std::abs(f.t - z(b.t(k + 1))), std::abs(f.v - z(b.v(k + 1))),
                    std::abs(f.a - z(b.a(k + 1)))});
    }
  }
  return d;
}

double TranscribedNlp::max_violation(const Vec& z) const {
  double viol = 0.0;
  for (const VehicleBlock& b : vehicles) {
    for (int k = 1; k <= b.num_cells(); ++k) {
      for (double r : path_constraints(state_at(b, z, k), {}, b.params, b.node_curvature[k])) {
        viol = std::max(viol, -r);
      }
    }
  }
  for (const PinRow& p : pins) {
    viol = std::max(viol, std::abs(z(vehicles[p.vehicle].t(p.node)) - p.value));
  }
  for (const CouplingRow& row : coupling) viol = std::max(viol, -coupling_residual(*this, row, z));
  return viol;
}

std::vector<CouplingRow> ordered_pair_rows(const TranscribedNlp& nlp, const ConflictZone& zone,
                                           const std::string& leader,
                                           const std::string& follower) {
  const int sl = nlp.vehicle_slot(leader);
  const int sf = nlp.vehicle_slot(follower);
  const ZoneMember* ml = zone.member(leader);
  const ZoneMember* mf = zone.member(follower);
  if (sl < 0 || sf < 0 || ml == nullptr || mf == nullptr) {
    throw Error("zone " + zone.id + ": ordered pair not in the problem");
  }
  std::vector<CouplingRow> rows;
  auto make = [&](CouplingKind kind, double pf, double pl, double rhs) {
    CouplingRow row;
    row.kind = kind;
    row.zone_id = zone.id;
    row.leader = leader;
    row.follower = follower;
    row.rhs = rhs;
    row.terms = time_terms(nlp, sf, pf, 1.0);
    for (const TimeTerm& t : time_terms(nlp, sl, pl, -1.0)) row.terms.push_back(t);
    rows.push_back(std::move(row));
  };
  if (zone.kind == ZoneKind::kIntersection) {
    make(CouplingKind::kIntersection, mf->p_in, ml->p_out, 0.0);
    return rows;
  }
  const double dt = mf->time_headway;
  const double c = mf->offset;
  const double lf = nlp.vehicles[sf].grid.nodes.back();
  const double shift = mf->p_in + c - ml->p_in;  // follower position = leader position + shift
  make(CouplingKind::kMergeEntry, std::clamp(mf->p_in + c, 0.0, lf), ml->p_in, dt);
  const VehicleGrid& gl = nlp.vehicles[sl].grid;
  const VehicleGrid& gf = nlp.vehicles[sf].grid;
  std::vector<double> interior;
  for (double p : gl.nodes) {
    if (p > ml->p_in + kPositionTolerance && p < ml->p_out - kPositionTolerance) interior.push_back(p);
  }
  // Follower nodes mapped back onto the leader's zone, so the time gap between
  // the two piecewise-linear profiles is bounded at every breakpoint.
  for (double q : gf.nodes) {
    const double p = q - shift;
    if (p > ml->p_in + kPositionTolerance && p < ml->p_out - kPositionTolerance) interior.push_back(p);
  }
  std::sort(interior.begin(), interior.end());
  interior.erase(std::unique(interior.begin(), interior.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-7; }),
                 interior.end());
  for (double p : interior) {
    const double q = p + shift;
    if (q < 0.0 || q > lf) continue;
    make(CouplingKind::kMergeInterior, q, p, dt);
  }
  make(CouplingKind::kMergeExit, std::clamp(mf->p_out + c, 0.0, lf), ml->p_out, dt);
  return rows;
}

TranscribedNlp transcribe(const Scenario& scenario, const std::vector<std::string>& vehicles,
                          const CrossingOrders* orders, const TimeSlotSchedule* pins,
                          int substeps) {
  if (orders != nullptr && pins != nullptr) {
    throw Error("transcribe: coupling and pins are mutually exclusive");
  }
  std::vector<std::string> ids = vehicles;
  if (ids.empty()) {
    for (const Path& p : scenario.paths) ids.push_back(p.vehicle_id);
  }
  TranscribedNlp nlp;
  nlp.substeps = substeps;
  for (const std::string& id : ids) {
    const std::size_t idx = scenario.vehicle_index(id);
    const Path& path = scenario.paths[idx];
    VehicleBlock b;
    b.vehicle_id = id;
    b.grid = make_vehicle_grid(path, scenario.grid_n, parameter_positions(scenario, id));
    b.params = scenario.params[idx];
    for (double p : b.grid.nodes) b.node_curvature.push_back(path.curvature_at(p));
    b.initial = {0.0, b.params.v_initial, b.params.a_initial};
    b.offset = nlp.num_variables;
    b.control_offset = nlp.num_controls;
    nlp.num_variables += b.num_variables();
    nlp.num_controls += b.num_cells();
    nlp.vehicles.push_back(std::move(b));
  }
  if (orders != nullptr) {
    for (const ConflictZone& zone : scenario.zones) {
      const auto it = orders->find(zone.id);
      if (it == orders->end()) continue;
      std::vector<std::string> seq;
      for (const std::string& v : it->second) {
        if (nlp.vehicle_slot(v) >= 0 && zone.member(v) != nullptr) seq.push_back(v);
      }
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        for (CouplingRow& row : ordered_pair_rows(nlp, zone, seq[i], seq[i + 1])) {
          nlp.coupling.push_back(std::move(row));
        }
      }
    }
  }
  if (pins != nullptr) {
    for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
      const auto it = pins->times.find(nlp.vehicles[s].vehicle_id);
      if (it == pins->times.end()) continue;
      for (const auto& [p, t] : it->second) {
        const int node = nlp.vehicles[s].grid.node_index(p);
        if (node < 0) {
          std::ostringstream os;
          os << "pin at p = " << p << " is not a grid node of '" << nlp.vehicles[s].vehicle_id
             << "'";
          throw Error(os.str());
        }
        nlp.pins.push_back({static_cast<int>(s), node, t, p});
      }
    }
  }
  return nlp;
}

Trajectory initial_guess_from(const VehicleBlock& block) {
  Trajectory tr;
  tr.vehicle_id = block.vehicle_id;
  tr.grid = block.grid.nodes;
  const double v0 = block.params.v_initial;
  for (double p : tr.grid) {
    tr.t.push_back(p / v0);
    tr.v.push_back(v0);
    tr.a.push_back(0.0);
  }
  tr.u.assign(block.num_cells(), 0.0);
  return tr;
}

Trajectory initial_guess_from(const Scenario& scenario, const std::string& vehicle_id) {
  const TranscribedNlp nlp = transcribe(scenario, {vehicle_id});
  return initial_guess_from(nlp.vehicles.front());
}

CondensedModel condense(const TranscribedNlp& nlp, const Vec& z,
                        const NlpMultipliers& multipliers, bool project, double floor) {
  return build_condensed(nlp, z, evaluate(nlp, z), multipliers, HessianMode::kExact, project,
                         floor);
}

NlpSolution solve_sqp(const TranscribedNlp& nlp, const std::vector<Trajectory>& guess,
                      const SqpSettings& settings, const NlpSolution* warm) {
  Vec z = nlp.pack(guess);
  for (const VehicleBlock& b : nlp.vehicles) {
    z(b.t(0)) = b.initial.t;
    z(b.v(0)) = b.initial.v;
    z(b.a(0)) = b.initial.a;
  }
  NlpMultipliers mult = zero_multipliers(nlp);
  QpSolution last_qp;
  bool have_qp = false;
  if (warm != nullptr && warm->multipliers.path.size() == mult.path.size() &&
      warm->multipliers.pins.size() == mult.pins.size() &&
      warm->multipliers.coupling.size() == mult.coupling.size()) {
    mult = warm->multipliers;
    last_qp = warm->last_qp;
    have_qp = !last_qp.active.empty();
  }
  double penalty = 1.0;
  double elastic_sum = 0.0;
  bool last_elastic = false;

  NlpSolution sol;
  std::vector<VehicleEval> ev;
  try {
    ev = evaluate(nlp, z);
  } catch (const SingularityError& e) {
    throw SolverError(std::string("initial guess is singular: ") + e.what());
  }
  QpSettings qps;
  int iter = 0;
  bool gn_fallback = false;
  KktReport rep;
  for (;; ++iter) {
    rep = kkt_report(nlp, z, ev, mult);
    const double kkt = std::max({rep.stationarity, rep.violation, rep.complementarity});
    spdlog::debug("sqp iter {:3d} obj {:.10g} stat {:.2e} defect {:.2e} viol {:.2e} comp {:.2e}",
                  iter, nlp.objective(z), rep.stationarity, rep.defect, rep.violation,
                  rep.complementarity);
    if (kkt <= settings.kkt_tolerance && rep.defect <= settings.defect_tolerance &&
        rep.violation <= settings.violation_tolerance) {
      sol.status = NlpStatus::kOptimal;
      break;
    }
    if (iter >= settings.max_iterations) {
      sol.status = last_elastic && elastic_sum > settings.violation_tolerance
                       ? NlpStatus::kInfeasible
                       : NlpStatus::kMaxIter;
      break;
    }

    const HessianMode mode = rep.stationarity <= settings.exact_hessian_threshold && !gn_fallback
                                 ? HessianMode::kExact
                                 : HessianMode::kGaussNewton;
    gn_fallback = false;
    const CondensedModel cm = build_condensed(nlp, z, ev, mult, mode, true, settings.hessian_floor);
    QpSolution qs = solve_qp(cm.qp, qps, have_qp ? &last_qp : nullptr);
    Vec du;
    Vec lin_resid_in;
    bool elastic_step = false;
    double slack_sum = 0.0;
    if (qs.status == QpStatus::kOptimal) {
      du = qs.z;
      last_qp = qs;
      have_qp = true;
    } else {
      spdlog::debug("sqp: QP {} after {} iterations, switching to elastic", to_string(qs.status),
                    qs.iterations);
      int ns = 0;
      const QuadraticProgram eqp = elastic(cm, settings.elastic_penalty, &ns);
      QpSolution es = solve_qp(eqp, qps);
      if (es.status != QpStatus::kOptimal) {
        spdlog::debug("sqp: elastic QP {}", to_string(es.status));
        sol.status = es.status == QpStatus::kInfeasible ? NlpStatus::kInfeasible : NlpStatus::kMaxIter;
        break;
      }
      du = es.z.head(nlp.num_controls);
      slack_sum = es.z.tail(ns).sum();
      elastic_step = true;
      qs.z = du;
      qs.lambda_eq = es.lambda_eq;
      qs.lambda_in = es.lambda_in;
      have_qp = false;
    }
    last_elastic = elastic_step;
    elastic_sum = slack_sum;

    const Vec dz = cm.W * du + cm.w;
    NlpMultipliers target = mult;
    target.path = qs.lambda_in.head(cm.num_path_rows);
    target.coupling = qs.lambda_in.tail(static_cast<int>(nlp.coupling.size()));
    target.pins = qs.lambda_eq;

    // Merit penalty dominates every multiplier of the new model.
    {
      const Offsets off = row_offsets(nlp);
      Vec model_grad = objective_gradient(nlp, ev);
      const HessianBlocks hb =
          lagrangian_blocks(nlp, ev, mult, off, mode, mode == HessianMode::kGaussNewton,
                            settings.hessian_floor);
      for (std::size_t s = 0; s < nlp.vehicles.size(); ++s) {
        const VehicleBlock& b = nlp.vehicles[s];
        const int n = b.num_cells();
        for (int k = 0; k <= n; ++k) {
          if (k < n) {
            const Eigen::Vector3d d(dz(b.v(k)), dz(b.a(k)), dz(b.u(k)));
            const Eigen::Vector3d hd = hb.cell[s][k] * d;
            model_grad(b.v(k)) += hd(0);
            model_grad(b.a(k)) += hd(1);
            model_grad(b.u(k)) += hd(2);
          } else {
            const Eigen::Vector2d d(dz(b.v(k)), dz(b.a(k)));
            const Eigen::Vector2d hd = hb.last[s] * d;
            model_grad(b.v(k)) += hd(0);
            model_grad(b.a(k)) += hd(1);
          }
        }
      }
      const Vec side = constraint_side(nlp, ev, target, off);
      target.defects = recover_defect_multipliers(nlp, ev, model_grad, side, off);
      const double biggest = std::max({max_abs(target.defects), max_abs(target.path),
                                       max_abs(target.pins), max_abs(target.coupling)});
      penalty = std::max(penalty, 1.1 * biggest + 1.0);
    }

    const MeritTerms m0 = merit_terms(nlp, z);
    const double phi0 = m0.objective + penalty * m0.infeasibility;
    const Vec grad = objective_gradient(nlp, ev);
    double lin_infeas = slack_sum;
    if (!elastic_step) {
      const Vec r_in = cm.qp.A_in * du - cm.qp.b_in;
      for (int i = 0; i < r_in.size(); ++i) lin_infeas += std::max(0.0, -r_in(i));
      if (cm.qp.A_eq.rows() > 0) lin_infeas += (cm.qp.A_eq * du - cm.qp.b_eq).cwiseAbs().sum();
    }
    const double dphi = grad.dot(dz) + penalty * (lin_infeas - m0.infeasibility);

    double alpha = 1.0;
    Vec z_trial;
    bool accepted = false;
    // Below this the merit cannot resolve the predicted change.
    if (std::abs(dphi) <= 1e-13 * (1.0 + std::abs(phi0)) && m0.infeasibility <= 1e-9) {
      z_trial = z + dz;
      accepted = true;
    }
    while (!accepted && alpha >= settings.min_step) {
      z_trial = z + alpha * dz;
      try {
        const MeritTerms mt = merit_terms(nlp, z_trial);
        const double phi = mt.objective + penalty * mt.infeasibility;
        if (phi <= phi0 + settings.armijo * alpha * std::min(dphi, 0.0)) {
          accepted = true;
          break;
        }
      } catch (const SingularityError&) {
      }
      alpha *= 0.5;
    }
    if (!accepted && mode == HessianMode::kExact) {
      spdlog::debug("sqp: exact-Hessian step rejected, retrying with Gauss-Newton");
      gn_fallback = true;
      continue;
    }
    const bool stalled = max_abs(dz) <= 1e-9 * (1.0 + max_abs(z)) ||
                         lin_infeas >= (1.0 - 1e-6) * m0.infeasibility;
    if (elastic_step && slack_sum > settings.violation_tolerance && (!accepted || stalled)) {
      spdlog::debug("sqp: restoration stalled with slack {:.3e}", slack_sum);
      sol.status = NlpStatus::kInfeasible;
      break;
    }
    if (!accepted) {
      spdlog::debug("sqp: line search failed (dphi {:.3e}, |dz| {:.3e})", dphi, max_abs(dz));
      // A tiny step that only fails on round-off is taken anyway.
      if (max_abs(dz) > 1e-9 * (1.0 + max_abs(z))) {
        sol.status = NlpStatus::kMaxIter;
        break;
      }
      alpha = 1.0;
      z_trial = z + dz;
    }
    spdlog::debug("sqp: alpha {:.3e} |dz| {:.3e} penalty {:.3e}{}", alpha, max_abs(dz), penalty,
                  elastic_step ? " elastic" : "");
    z = z_trial;
    mult.path += alpha * (target.path - mult.path);
    mult.pins += alpha * (target.pins - mult.pins);
    mult.coupling += alpha * (target.coupling - mult.coupling);
    try {
      ev = evaluate(nlp, z);
    } catch (const SingularityError& e) {
      throw SolverError(std::string("SQP iterate became singular: ") + e.what());
    }
  }

  sol.z = z;
  sol.iterations = iter;
  sol.trajectories = nlp.unpack(z);
  sol.multipliers = mult;
  sol.vehicle_objectives = nlp.vehicle_objectives(z);
  sol.objective = 0.0;
  for (double j : sol.vehicle_objectives) sol.objective += j;
  sol.kkt_residual = std::max({rep.stationarity, rep.violation, rep.complementarity});
  sol.max_defect = rep.defect;
  sol.max_violation = rep.violation;
  sol.elastic_residual = last_elastic ? elastic_sum : 0.0;
  sol.last_qp = last_qp;
  return sol;
}

}  // namespace sitecoord
