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

#include "sitecoord/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace sitecoord {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bound {
  int var;
  bool is_lower;
};

class DualActiveSet {
 public:
  DualActiveSet(const QuadraticProgram& qp, const QpSettings& settings)
      : qp_(qp), settings_(settings), n_(qp.num_variables()) {
    m_eq_ = static_cast<int>(qp.A_eq.rows());
    for (int j = 0; j < n_ && qp.lower.size() == n_; ++j) {
      if (std::isfinite(qp.lower(j))) bounds_.push_back({j, true});
    }
    for (int j = 0; j < n_ && qp.upper.size() == n_; ++j) {
      if (std::isfinite(qp.upper(j))) bounds_.push_back({j, false});
    }
    const int m_in = static_cast<int>(qp.A_in.rows());
    m_ineq_ = m_in + static_cast<int>(bounds_.size());
    C_.resize(m_ineq_, n_);
    c_.resize(m_ineq_);
    if (m_in > 0) {
      C_.topRows(m_in) = qp.A_in;
      c_.head(m_in) = qp.b_in;
    }
    for (std::size_t k = 0; k < bounds_.size(); ++k) {
      const int row = m_in + static_cast<int>(k);
      C_.row(row).setZero();
      if (bounds_[k].is_lower) {
        C_(row, bounds_[k].var) = 1.0;
        c_(row) = qp.lower(bounds_[k].var);
      } else {
        C_(row, bounds_[k].var) = -1.0;
        c_(row) = -qp.upper(bounds_[k].var);
      }
    }
    row_norm_.resize(m_ineq_);
    for (int i = 0; i < m_ineq_; ++i) {
      row_norm_(i) = std::max(C_.row(i).norm(), 1e-300);
    }
  }

  QpSolution run(const QpSolution* warm) {
    QpSolution out;
    Eigen::LLT<Mat> llt(qp_.H);
    if (llt.info() != Eigen::Success) {
      throw SolverError("QP Hessian is not positive definite");
    }
    const Mat L = llt.matrixL();
    J_ = L.triangularView<Eigen::Lower>().solve(Mat::Identity(n_, n_)).transpose();
    R_ = Mat::Zero(n_, n_);
    u_ = Vec::Zero(n_ + 1);
    active_.assign(n_ + 1, -1);
    q_ = 0;
    x_ = -llt.solve(qp_.g);

    const int max_iter = settings_.max_iterations > 0
                             ? settings_.max_iterations
                             : 10 * (n_ + m_eq_ + m_ineq_);
    int changes = 0;

    // Equalities first; they are never dropped.
    for (int i = 0; i < m_eq_; ++i) {
      const Vec np = qp_.A_eq.row(i).transpose();
      Vec d = J_.transpose() * np;
      const Vec z = step_z(d);
      const Vec r = step_r(d);
      const double s = np.dot(x_) - qp_.b_eq(i);
      const double zn = z.dot(np);
      if (zn > dependent_threshold(d)) {
        const double t = -s / zn;
        x_ += t * z;
        u_.head(q_) -= t * r;
        u_(q_) = t;
        add_constraint(d);
        active_[q_ - 1] = i;
        ++changes;
      } else if (std::abs(s) > feasibility_tolerance(np, qp_.b_eq(i))) {
        // Linearly dependent and inconsistent with the active equalities.
        out.certificate = certificate(i, s < 0.0 ? 1.0 : -1.0, r);
        return finish(out, QpStatus::kInfeasible, changes);
      }
    }
    num_eq_active_ = q_;

    std::unordered_set<int> preferred;
    if (warm != nullptr) {
      for (int id : warm->active) {
        if (id >= m_eq_ && id < m_eq_ + m_ineq_) preferred.insert(id);
      }
    }

    std::vector<char> is_active(m_ineq_, 0);
    std::vector<char> skipped(m_ineq_, 0);
    while (true) {
      if (changes > max_iter) return finish(out, QpStatus::kIterLimit, changes);
      const Vec slack = C_ * x_ - c_;
      int p = -1;
      double worst = 0.0;
      bool worst_preferred = false;
      for (int i = 0; i < m_ineq_; ++i) {
        if (is_active[i]) continue;
        if (slack(i) >= -feasibility_tolerance(i)) continue;
        if (skipped[i] && slack(i) >= -loose_tolerance(i)) continue;
        const double score = slack(i) / row_norm_(i);
        const bool pref = preferred.count(m_eq_ + i) > 0;
        // Warm-start constraints first, then most violated, ties by index.
        if (p < 0 || (pref && !worst_preferred) ||
            (pref == worst_preferred && score < worst)) {
          p = i;
          worst = score;
          worst_preferred = pref;
        }
      }
      if (p < 0) break;

      const Vec np = C_.row(p).transpose();
      double sp = slack(p);
      double up = 0.0;
      while (true) {
        Vec d = J_.transpose() * np;
        const Vec z = step_z(d);
        const Vec r = step_r(d);
        double t1 = kInf;
        int drop = -1;
        const double r_tol = 1e-12 * (r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0);
        for (int k = num_eq_active_; k < q_; ++k) {
          if (r(k) > r_tol) {
            const double ratio = u_(k) / r(k);
            if (ratio < t1 || (ratio == t1 && drop >= 0 && active_[k] < active_[drop])) {
              t1 = ratio;
              drop = k;
            }
          }
        }
        const double zn = z.dot(np);
        const double t2 = zn > dependent_threshold(d) ? -sp / zn : kInf;
        if (!std::isfinite(t2) && up == 0.0 && -sp <= loose_tolerance(p)) {
          // Dependent on the working set and violated only by round-off.
          skipped[p] = 1;
          break;
        }
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) {
          out.certificate = certificate(m_eq_ + p, 1.0, r);
          return finish(out, QpStatus::kInfeasible, changes);
        }
        u_.head(q_) -= t * r;
        up += t;
        if (!std::isfinite(t2)) {
          // Dual-only step: p is dependent on the working set.
          is_active[active_[drop] - m_eq_] = 0;
          delete_constraint(drop);
          ++changes;
          continue;
        }
        x_ += t * z;
        if (t2 <= t1) {
          u_(q_) = up;
          if (!add_constraint(d)) {
            throw SolverError("QP active-set update lost rank");
          }
          active_[q_ - 1] = m_eq_ + p;
          is_active[p] = 1;
          ++changes;
          break;
        }
        is_active[active_[drop] - m_eq_] = 0;
        delete_constraint(drop);
        ++changes;
        sp = np.dot(x_) - c_(p);
        if (changes > max_iter) return finish(out, QpStatus::kIterLimit, changes);
      }
    }
    return finish(out, QpStatus::kOptimal, changes);
  }

 private:
  double dependent_threshold(const Vec& d) const {
    const double scale = d.squaredNorm();
    return 1e-14 * scale;
  }

  double feasibility_tolerance(int ineq) const {
    return 1e-13 * (1.0 + std::abs(c_(ineq)) + row_norm_(ineq) * x_.cwiseAbs().maxCoeff());
  }

  double loose_tolerance(int ineq) const {
    return 1e-9 * (1.0 + std::abs(c_(ineq)) + row_norm_(ineq) * x_.cwiseAbs().maxCoeff());
  }

  double feasibility_tolerance(const Vec& np, double b) const {
    return 1e-10 * (1.0 + std::abs(b) + np.norm() * x_.cwiseAbs().maxCoeff());
  }

  Vec step_z(const Vec& d) const {
    return J_.rightCols(n_ - q_) * d.tail(n_ - q_);
  }

  Vec step_r(const Vec& d) const {
    return R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
  }

  bool add_constraint(Vec& d) {
    for (int j = n_ - 1; j > q_; --j) {
      const double a = d(j - 1);
      const double b = d(j);
      if (b == 0.0) continue;
      const double h = std::hypot(a, b);
      const double c = a / h;
      const double s = b / h;
      d(j - 1) = h;
      d(j) = 0.0;
      for (int k = 0; k < n_; ++k) {
        const double ja = J_(k, j - 1);
        const double jb = J_(k, j);
        J_(k, j - 1) = c * ja + s * jb;
        J_(k, j) = -s * ja + c * jb;
      }
    }
    if (q_ >= n_ || std::abs(d(q_)) <= 1e-14 * d.norm()) return false;
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    ++q_;
    return true;
  }

  void delete_constraint(int l) {
    for (int k = l; k < q_ - 1; ++k) {
      R_.col(k) = R_.col(k + 1);
      active_[k] = active_[k + 1];
      u_(k) = u_(k + 1);
    }
    u_(q_ - 1) = u_(q_);
    u_(q_) = 0.0;
    active_[q_ - 1] = -1;
    R_.col(q_ - 1).setZero();
    --q_;
    for (int j = l; j < q_; ++j) {
      const double a = R_(j, j);
      const double b = R_(j + 1, j);
      if (b == 0.0) continue;
      const double h = std::hypot(a, b);
      const double c = a / h;
      const double s = b / h;
      for (int k = j; k < q_; ++k) {
        const double ra = R_(j, k);
        const double rb = R_(j + 1, k);
        R_(j, k) = c * ra + s * rb;
        R_(j + 1, k) = -s * ra + c * rb;
      }
      R_(j + 1, j) = 0.0;
      for (int k = 0; k < n_; ++k) {
        const double ja = J_(k, j);
        const double jb = J_(k, j + 1);
        J_(k, j) = c * ja + s * jb;
        J_(k, j + 1) = -s * ja + c * jb;
      }
    }
  }

  // y_p = sign, y_active = -sign * r.
  InfeasibilityCertificate certificate(int violated, double sign, const Vec& r) const {
    InfeasibilityCertificate cert;
    cert.y_eq = Vec::Zero(m_eq_);
    Vec y_ineq = Vec::Zero(m_ineq_);
    auto put = [&](int id, double value) {
      if (id < m_eq_) {
        cert.y_eq(id) += value;
      } else {
        y_ineq(id - m_eq_) += value;
      }
    };
    put(violated, sign);
    for (int k = 0; k < q_; ++k) put(active_[k], -sign * r(k));
    split_ineq(y_ineq, cert.y_in, cert.y_lower, cert.y_upper);
    return cert;
  }

  void split_ineq(const Vec& y, Vec& in, Vec& lower, Vec& upper) const {
    const int m_in = static_cast<int>(qp_.A_in.rows());
    in = y.head(m_in);
    lower = Vec::Zero(n_);
    upper = Vec::Zero(n_);
    for (std::size_t k = 0; k < bounds_.size(); ++k) {
      const double v = y(m_in + static_cast<int>(k));
      (bounds_[k].is_lower ? lower : upper)(bounds_[k].var) += v;
    }
  }

  void fill_multipliers(QpSolution& out, const std::vector<int>& ids, const Vec& mult) const {
    out.lambda_eq = Vec::Zero(m_eq_);
    Vec y = Vec::Zero(m_ineq_);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (ids[k] < m_eq_) {
        out.lambda_eq(ids[k]) = mult(static_cast<int>(k));
      } else {
        y(ids[k] - m_eq_) = mult(static_cast<int>(k));
      }
    }
    split_ineq(y, out.lambda_in, out.lambda_lower, out.lambda_upper);
  }

  // Re-solves the KKT system of the final working set with iterative
  // refinement; kept only if it lowers the residual.
  void polish(QpSolution& out) const {
    const int q = static_cast<int>(out.active.size());
    if (q == 0 && m_eq_ == 0) {
      Eigen::LLT<Mat> llt(qp_.H);
      Vec z = -llt.solve(qp_.g);
      z += llt.solve(-qp_.g - qp_.H * z);
      QpSolution trial = out;
      trial.z = z;
      trial.kkt_residual = kkt_residuals(qp_, trial).max();
      if (trial.kkt_residual < out.kkt_residual) out = trial;
      return;
    }
    Mat N(q, n_);
    Vec b(q);
    for (int k = 0; k < q; ++k) {
      const int id = out.active[k];
      if (id < m_eq_) {
        N.row(k) = qp_.A_eq.row(id);
        b(k) = qp_.b_eq(id);
      } else {
        N.row(k) = C_.row(id - m_eq_);
        b(k) = c_(id - m_eq_);
      }
    }
    Mat K = Mat::Zero(n_ + q, n_ + q);
    K.topLeftCorner(n_, n_) = qp_.H;
    K.topRightCorner(n_, q) = -N.transpose();
    K.bottomLeftCorner(q, n_) = N;
    Vec rhs(n_ + q);
    rhs << -qp_.g, b;
    Eigen::PartialPivLU<Mat> lu(K);
    Vec sol = lu.solve(rhs);
    for (int it = 0; it < 2; ++it) sol += lu.solve(rhs - K * sol);
    if (!sol.allFinite()) return;
    QpSolution trial = out;
    trial.z = sol.head(n_);
    fill_multipliers(trial, out.active, sol.tail(q));
    trial.kkt_residual = kkt_residuals(qp_, trial).max();
    if (trial.kkt_residual < out.kkt_residual) out = trial;
  }

  QpSolution& finish(QpSolution& out, QpStatus status, int changes) const {
    out.status = status;
    out.iterations = changes;
    out.z = x_;
    out.active.assign(active_.begin(), active_.begin() + q_);
    fill_multipliers(out, out.active, u_.head(q_));
    if (status == QpStatus::kOptimal) {
      out.kkt_residual = kkt_residuals(qp_, out).max();
      if (out.kkt_residual > settings_.tolerance) polish(out);
    } else {
      out.kkt_residual = kkt_residuals(qp_, out).max();
    }
    out.objective = qp_objective(qp_, out.z);
    return out;
  }

  const QuadraticProgram& qp_;
  QpSettings settings_;
  int n_;
  int m_eq_ = 0;
  int m_ineq_ = 0;
  std::vector<Bound> bounds_;
  Mat C_;
  Vec c_;
  Vec row_norm_;

  Mat J_;
  Mat R_;
  Vec u_;
  Vec x_;
  std::vector<int> active_;
  int q_ = 0;
  int num_eq_active_ = 0;
};

}  // namespace

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kInfeasible:
      return "infeasible";
    case QpStatus::kIterLimit:
      return "iteration_limit";
  }
  return "unknown";
}

void check_dimensions(const QuadraticProgram& p) {
  const int n = p.num_variables();
  if (p.H.rows() != n || p.H.cols() != n) {
    throw ValidationError("qp.H", "must be n x n");
  }
  if ((p.H - p.H.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, p.H.cwiseAbs().maxCoeff())) {
    throw ValidationError("qp.H", "must be symmetric");
  }
  if (p.A_eq.rows() != p.b_eq.size() || (p.A_eq.rows() > 0 && p.A_eq.cols() != n)) {
    throw ValidationError("qp.A_eq", "dimension mismatch");
  }
  if (p.A_in.rows() != p.b_in.size() || (p.A_in.rows() > 0 && p.A_in.cols() != n)) {
    throw ValidationError("qp.A_in", "dimension mismatch");
  }
  if ((p.lower.size() != 0 && p.lower.size() != n) ||
      (p.upper.size() != 0 && p.upper.size() != n)) {
    throw ValidationError("qp.bounds", "dimension mismatch");
  }
}

QpSolution solve_qp(const QuadraticProgram& problem, const QpSettings& settings,
                    const QpSolution* warm_start) {
  check_dimensions(problem);
  DualActiveSet solver(problem, settings);
  return solver.run(warm_start);
}

double KktResiduals::max() const {
  return std::max({stationarity, primal, dual, complementarity});
}

double qp_objective(const QuadraticProgram& p, const Vec& z) {
  return 0.5 * z.dot(p.H * z) + p.g.dot(z);
}

KktResiduals kkt_residuals(const QuadraticProgram& p, const QpSolution& s) {
  KktResiduals r;
  const int n = p.num_variables();
  Vec grad = p.H * s.z + p.g;
  if (p.A_eq.rows() > 0) grad -= p.A_eq.transpose() * s.lambda_eq;
  if (p.A_in.rows() > 0) grad -= p.A_in.transpose() * s.lambda_in;
  if (s.lambda_lower.size() == n) grad -= s.lambda_lower;
  if (s.lambda_upper.size() == n) grad += s.lambda_upper;
  r.stationarity = grad.size() > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;

  auto upd = [](double& target, double v) { target = std::max(target, v); };
  if (p.A_eq.rows() > 0) {
    upd(r.primal, (p.A_eq * s.z - p.b_eq).cwiseAbs().maxCoeff());
  }
  if (p.A_in.rows() > 0) {
    const Vec slack = p.A_in * s.z - p.b_in;
    for (int i = 0; i < slack.size(); ++i) {
      upd(r.primal, -slack(i));
      upd(r.dual, -s.lambda_in(i));
      upd(r.complementarity, std::abs(s.lambda_in(i) * slack(i)));
    }
  }
  for (int j = 0; j < n; ++j) {
    if (p.lower.size() == n && std::isfinite(p.lower(j))) {
      const double sl = s.z(j) - p.lower(j);
      upd(r.primal, -sl);
      upd(r.dual, -s.lambda_lower(j));
      upd(r.complementarity, std::abs(s.lambda_lower(j) * sl));
    }
    if (p.upper.size() == n && std::isfinite(p.upper(j))) {
      const double su = p.upper(j) - s.z(j);
      upd(r.primal, -su);
      upd(r.dual, -s.lambda_upper(j));
      upd(r.complementarity, std::abs(s.lambda_upper(j) * su));
    }
  }
  return r;
}

double verify_certificate(const QuadraticProgram& p,
                          const InfeasibilityCertificate& c, double tolerance) {
  const int n = p.num_variables();
  Vec combo = Vec::Zero(n);
  double by = 0.0;
  double scale = 0.0;
  if (p.A_eq.rows() > 0) {
    combo += p.A_eq.transpose() * c.y_eq;
    by += p.b_eq.dot(c.y_eq);
    scale = std::max(scale, c.y_eq.cwiseAbs().maxCoeff());
  }
  if (p.A_in.rows() > 0) {
    if ((c.y_in.array() < -tolerance).any()) return -kInf;
    combo += p.A_in.transpose() * c.y_in;
    by += p.b_in.dot(c.y_in);
    scale = std::max(scale, c.y_in.cwiseAbs().maxCoeff());
  }
  for (int j = 0; j < n; ++j) {
    if (c.y_lower.size() == n && c.y_lower(j) != 0.0) {
      if (c.y_lower(j) < -tolerance) return -kInf;
      combo(j) += c.y_lower(j);
      by += c.y_lower(j) * p.lower(j);
    }
    if (c.y_upper.size() == n && c.y_upper(j) != 0.0) {
      if (c.y_upper(j) < -tolerance) return -kInf;
      combo(j) -= c.y_upper(j);
      by -= c.y_upper(j) * p.upper(j);
    }
  }
  if (n > 0 && combo.cwiseAbs().maxCoeff() > tolerance * std::max(1.0, scale)) {
    return -kInf;
  }
  return by;
}

}  // namespace sitecoord
