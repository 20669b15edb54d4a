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

#include "sitecoord/order_scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>

#include <spdlog/spdlog.h>

namespace sitecoord {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPositionTolerance = 1e-9;

const ValueExpansion* find_expansion(const std::vector<ValueExpansion>& expansions,
                                     const std::string& vehicle_id) {
  for (const ValueExpansion& e : expansions) {
    if (e.vehicle_id == vehicle_id) return &e;
  }
  return nullptr;
}

// Relaxation or fixed QP over [T; free binaries].
struct NodeQp {
  QuadraticProgram qp;
  std::vector<int> free;  // binary index of each binary column
};

NodeQp node_qp(const MiqpModel& model, const std::vector<int>& fixing, double regularization) {
  NodeQp out;
  const int nt = model.num_continuous();
  std::vector<int> column(model.num_binaries(), -1);
  for (int k = 0; k < model.num_binaries(); ++k) {
    if (fixing[k] < 0) {
      column[k] = nt + static_cast<int>(out.free.size());
      out.free.push_back(k);
    }
  }
  const int n = nt + static_cast<int>(out.free.size());
  QuadraticProgram& qp = out.qp;
  qp.H = Mat::Zero(n, n);
  qp.H.topLeftCorner(nt, nt) = model.H;
  for (int i = nt; i < n; ++i) qp.H(i, i) = regularization;
  qp.g = Vec::Zero(n);
  qp.g.head(nt) = model.g;
  qp.A_eq = Mat::Zero(0, n);
  qp.b_eq = Vec::Zero(0);
  qp.A_in = Mat::Zero(static_cast<int>(model.rows.size()), n);
  qp.b_in = Vec::Zero(static_cast<int>(model.rows.size()));
  for (std::size_t r = 0; r < model.rows.size(); ++r) {
    double rhs = model.rows[r].rhs;
    for (const auto& [col, c] : model.rows[r].coef) {
      if (col < nt) {
        qp.A_in(r, col) += c;
      } else if (column[col - nt] >= 0) {
        qp.A_in(r, column[col - nt]) += c;
      } else {
        rhs -= c * fixing[col - nt];
      }
    }
    qp.b_in(r) = rhs;
  }
  if (!out.free.empty()) {
    qp.lower = Vec::Constant(n, -kInf);
    qp.upper = Vec::Constant(n, kInf);
    qp.lower.tail(out.free.size()).setZero();
    qp.upper.tail(out.free.size()).setOnes();
  }
  return out;
}

struct Node {
  double bound = 0.0;
  int id = 0;
  std::vector<int> fixing;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.id > b.id;
  }
};

TimeSlotSchedule schedule_from(const MiqpModel& model, const Vec& T) {
  TimeSlotSchedule s;
  for (int i = 0; i < model.num_continuous(); ++i) {
    const TimeParameter& p = model.parameters[i];
    s.times[p.vehicle_id].emplace_back(p.position, T(i));
  }
  for (auto& [id, list] : s.times) std::sort(list.begin(), list.end());
  return s;
}

}  // namespace

const char* to_string(MiqpRowKind kind) {
  switch (kind) {
    case MiqpRowKind::kIntersection:
      return "intersection";
    case MiqpRowKind::kMergeEntry:
      return "merge_entry";
    case MiqpRowKind::kMergeExit:
      return "merge_exit";
    case MiqpRowKind::kTravelTime:
      return "travel_time";
  }
  return "unknown";
}

int MiqpModel::parameter_index(const std::string& vehicle_id, double position) const {
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    if (parameters[i].vehicle_id == vehicle_id &&
        std::abs(parameters[i].position - position) <= kPositionTolerance) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

double MiqpModel::objective(const Vec& T) const { return 0.5 * T.dot(H * T) + g.dot(T); }

MiqpModel build_miqp(const Scenario& scenario, const std::vector<ValueExpansion>& expansions,
                     const MiqpSettings& settings) {
  MiqpModel model;
  std::vector<Mat> blocks;
  std::vector<Vec> gs;
  double longest = 0.0;
  double slowest = kInf;
  for (std::size_t v = 0; v < scenario.num_vehicles(); ++v) {
    const std::string& id = scenario.paths[v].vehicle_id;
    longest = std::max(longest, scenario.paths[v].length());
    slowest = std::min(slowest, scenario.params[v].v_min);
    if (scenario.zones_of(id).empty()) continue;
    const ValueExpansion* e = find_expansion(expansions, id);
    if (e == nullptr) throw Error("build_miqp: missing value expansion for '" + id + "'");
    for (std::size_t i = 0; i < e->positions.size(); ++i) {
      model.parameters.push_back({id, e->positions[i], e->reference(i)});
    }
    const Mat& h = settings.use_psd_hessian ? e->psd_hessian : e->hessian;
    blocks.push_back(h);
    gs.push_back(e->gradient - h * e->reference);
    model.constant += e->value - e->gradient.dot(e->reference) +
                      0.5 * e->reference.dot(h * e->reference);
  }
  const int nt = model.num_continuous();
  model.H = Mat::Zero(nt, nt);
  model.g = Vec::Zero(nt);
  int off = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int n = static_cast<int>(blocks[b].rows());
    model.H.block(off, off, n, n) = blocks[b];
    model.g.segment(off, n) = gs[b];
    off += n;
  }
  model.big_m = 2.0 * longest / slowest;
  const double M = model.big_m;

  auto col = [&](const std::string& vehicle, double position) {
    const double length = scenario.paths[scenario.vehicle_index(vehicle)].length();
    const int c = model.parameter_index(vehicle, std::clamp(position, 0.0, length));
    if (c < 0) {
      std::ostringstream os;
      os << "build_miqp: expansion of '" << vehicle << "' has no parameter at p = " << position;
      throw Error(os.str());
    }
    return c;
  };

  for (const ConflictZone& zone : scenario.zones) {
    for (std::size_t i = 0; i < zone.members.size(); ++i) {
      for (std::size_t j = i + 1; j < zone.members.size(); ++j) {
        const ZoneMember& mi = zone.members[i];
        const ZoneMember& mj = zone.members[j];
        const int bin = nt + model.num_binaries();
        const int bidx = model.num_binaries();
        model.binaries.push_back({zone.id, mi.vehicle_id, mj.vehicle_id});
        // leader first: rows hold when `on` (b == 1 for i first, b == 0 for j first).
        auto add_pair = [&](const ZoneMember& lead, const ZoneMember& follow, bool lead_is_first) {
          auto add = [&](MiqpRowKind kind, int follower_col, int leader_col, double gap) {
            MiqpRow row;
            row.kind = kind;
            row.binary = bidx;
            row.coef = {{follower_col, 1.0}, {leader_col, -1.0}};
            if (lead_is_first) {
              // t_f - t_l >= gap - M (1 - b)
              row.coef.push_back({bin, -M});
              row.rhs = gap - M;
            } else {
              // t_f - t_l >= gap - M b
              row.coef.push_back({bin, M});
              row.rhs = gap;
            }
            model.rows.push_back(std::move(row));
          };
          if (zone.kind == ZoneKind::kIntersection) {
            add(MiqpRowKind::kIntersection, col(follow.vehicle_id, follow.p_in),
                col(lead.vehicle_id, lead.p_out), 0.0);
          } else {
            add(MiqpRowKind::kMergeEntry, col(follow.vehicle_id, follow.p_in + follow.offset),
                col(lead.vehicle_id, lead.p_in), follow.time_headway);
            add(MiqpRowKind::kMergeExit, col(follow.vehicle_id, follow.p_out + follow.offset),
                col(lead.vehicle_id, lead.p_out), follow.time_headway);
          }
        };
        add_pair(mi, mj, true);
        add_pair(mj, mi, false);
      }
    }
  }

  // Travel-time windows between consecutive parameters (and from the start).
  for (int c = 0; c < nt; ++c) {
    const TimeParameter& p = model.parameters[c];
    const VehicleParams& vp = scenario.params[scenario.vehicle_index(p.vehicle_id)];
    const bool first = c == 0 || model.parameters[c - 1].vehicle_id != p.vehicle_id;
    const double dp = first ? p.position : p.position - model.parameters[c - 1].position;
    MiqpRow lo;
    lo.kind = MiqpRowKind::kTravelTime;
    lo.coef = {{c, 1.0}};
    if (!first) lo.coef.push_back({c - 1, -1.0});
    lo.rhs = dp / vp.v_max;
    MiqpRow hi = lo;
    for (auto& [k, v] : hi.coef) v = -v;
    hi.rhs = -dp / vp.v_min;
    model.rows.push_back(std::move(lo));
    model.rows.push_back(std::move(hi));
  }
  return model;
}

std::vector<int> presolve(const Scenario& scenario, const MiqpModel& model) {
  const int nt = model.num_continuous();
  Vec lo(nt);
  Vec hi(nt);
  for (int c = 0; c < nt; ++c) {
    const TimeParameter& p = model.parameters[c];
    const VehicleParams& vp = scenario.params[scenario.vehicle_index(p.vehicle_id)];
    lo(c) = p.position / vp.v_max;
    hi(c) = p.position / vp.v_min;
  }
  std::vector<int> fixing(model.num_binaries(), -1);
  for (int k = 0; k < model.num_binaries(); ++k) {
    bool possible[2] = {true, true};
    for (int value = 0; value < 2; ++value) {
      for (const MiqpRow& row : model.rows) {
        if (row.binary != k) continue;
        double best = 0.0;
        double rhs = row.rhs;
        for (const auto& [col, c] : row.coef) {
          if (col >= nt) {
            rhs -= c * value;
          } else {
            best += c > 0 ? c * hi(col) : c * lo(col);
          }
        }
        if (best < rhs - 1e-9) possible[value] = false;
      }
    }
    if (possible[0] != possible[1]) fixing[k] = possible[1] ? 1 : 0;
  }
  return fixing;
}

FixedOrderQp solve_fixed_binaries(const MiqpModel& model, const std::vector<int>& values) {
  if (static_cast<int>(values.size()) != model.num_binaries()) {
    throw Error("solve_fixed_binaries: one value per binary expected");
  }
  const NodeQp nq = node_qp(model, values, 0.0);
  const QpSolution s = solve_qp(nq.qp);
  FixedOrderQp out;
  out.status = s.status;
  out.certificate = s.certificate;
  if (s.status == QpStatus::kOptimal) {
    out.T = s.z;
    out.objective = model.objective(s.z);
  }
  return out;
}

CrossingOrders extract_orders(const Scenario& scenario, const TimeSlotSchedule& schedule) {
  CrossingOrders orders;
  for (const ConflictZone& zone : scenario.zones) {
    std::vector<std::pair<double, std::size_t>> entries;
    for (const ZoneMember& m : zone.members) {
      entries.emplace_back(schedule.time_at(m.vehicle_id, m.p_in),
                           scenario.vehicle_index(m.vehicle_id));
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& [t, idx] : entries) orders[zone.id].push_back(scenario.paths[idx].vehicle_id);
  }
  return orders;
}

MiqpResult solve_bnb(const Scenario& scenario, const MiqpModel& model,
                     const MiqpSettings& settings) {
  MiqpResult res;
  const int nb = model.num_binaries();
  std::vector<int> root = presolve(scenario, model);
  res.stats.fixed_by_presolve =
      static_cast<int>(std::count_if(root.begin(), root.end(), [](int v) { return v >= 0; }));

  double incumbent = kInf;
  std::vector<int> best_binaries;
  Vec best_T;
  int next_id = 0;
  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  open.push({-kInf, next_id++, root});

  auto try_incumbent = [&](const std::vector<int>& values) {
    const FixedOrderQp f = solve_fixed_binaries(model, values);
    ++res.stats.qp_solves;
    if (f.status != QpStatus::kOptimal) return false;
    if (f.objective < incumbent) {
      incumbent = f.objective;
      best_binaries = values;
      best_T = f.T;
    }
    return true;
  };

  while (!open.empty()) {
    Node node = open.top();
    open.pop();
    if (node.bound >= incumbent - settings.prune_tolerance) {
      ++res.stats.pruned_by_bound;
      continue;
    }
    if (++res.stats.nodes > settings.max_nodes) {
      throw SolverError("branch and bound exceeded the node limit");
    }
    if (std::none_of(node.fixing.begin(), node.fixing.end(), [](int v) { return v < 0; })) {
      if (!try_incumbent(node.fixing)) ++res.stats.pruned_infeasible;
      continue;
    }
    const NodeQp nq = node_qp(model, node.fixing, settings.binary_regularization);
    const QpSolution s = solve_qp(nq.qp);
    ++res.stats.qp_solves;
    if (s.status != QpStatus::kOptimal) {
      if (node.id == 0) {
        std::ostringstream os;
        os << "MIQP relaxation is " << to_string(s.status);
        if (s.certificate) os << " (certificate b'y = " << verify_certificate(nq.qp, *s.certificate) << ")";
        throw SolverError(os.str());
      }
      ++res.stats.pruned_infeasible;
      continue;
    }
    const int nt = model.num_continuous();
    const double bound = model.objective(s.z.head(nt)) -
                         0.5 * settings.binary_regularization * static_cast<double>(nq.free.size()) +
                         0.5 * settings.binary_regularization * s.z.tail(nq.free.size()).squaredNorm();
    if (bound >= incumbent - settings.prune_tolerance) {
      ++res.stats.pruned_by_bound;
      continue;
    }
    int branch = -1;
    double frac_best = -1.0;
    for (std::size_t i = 0; i < nq.free.size(); ++i) {
      const double b = s.z(nt + static_cast<int>(i));
      const double frac = std::min(b, 1.0 - b);
      if (frac > settings.integrality_tolerance && frac > frac_best + 1e-12) {
        frac_best = frac;
        branch = nq.free[i];
      }
    }
    if (branch < 0) {
      std::vector<int> values = node.fixing;
      for (std::size_t i = 0; i < nq.free.size(); ++i) {
        values[nq.free[i]] = s.z(nt + static_cast<int>(i)) > 0.5 ? 1 : 0;
      }
      if (!try_incumbent(values)) ++res.stats.pruned_infeasible;
      continue;
    }
    for (int value : {0, 1}) {
      Node child{bound, next_id++, node.fixing};
      child.fixing[branch] = value;
      open.push(std::move(child));
    }
  }
  if (!std::isfinite(incumbent)) {
    throw SolverError("MIQP has no integer-feasible crossing order");
  }
  res.binaries = best_binaries;
  res.T = best_T;
  res.objective = incumbent;
  res.schedule = schedule_from(model, best_T);
  res.orders = extract_orders(scenario, res.schedule);
  for (int k = 0; k < nb; ++k) {
    const OrderingBinary& b = model.binaries[k];
    const auto& seq = res.orders.at(b.zone_id);
    const auto pf = std::find(seq.begin(), seq.end(), b.first);
    const auto ps = std::find(seq.begin(), seq.end(), b.second);
    if ((pf < ps) != (best_binaries[k] == 1)) {
      throw Error("MIQP binaries disagree with the entry-time order in zone " + b.zone_id);
    }
  }
  spdlog::debug("bnb: objective {:.9g} nodes {} qp solves {} presolve fixed {}", incumbent,
                res.stats.nodes, res.stats.qp_solves, res.stats.fixed_by_presolve);
  return res;
}

void write_miqp(std::ostream& os, const MiqpModel& model) {
  const int nt = model.num_continuous();
  os.precision(17);
  os << "miqp " << nt << " " << model.num_binaries() << " " << model.rows.size() << " "
     << model.big_m << " " << model.constant << "\n";
  for (int i = 0; i < nt; ++i) {
    const TimeParameter& p = model.parameters[i];
    os << "param " << i << " " << p.vehicle_id << " " << p.position << " " << p.reference << "\n";
  }
  for (int k = 0; k < model.num_binaries(); ++k) {
    const OrderingBinary& b = model.binaries[k];
    os << "binary " << nt + k << " " << b.zone_id << " " << b.first << " " << b.second << "\n";
  }
  for (int i = 0; i < nt; ++i) {
    for (int j = i; j < nt; ++j) {
      if (model.H(i, j) != 0.0) os << "H " << i << " " << j << " " << model.H(i, j) << "\n";
    }
  }
  for (int i = 0; i < nt; ++i) os << "g " << i << " " << model.g(i) << "\n";
  for (std::size_t r = 0; r < model.rows.size(); ++r) {
    const MiqpRow& row = model.rows[r];
    os << "row " << r << " " << to_string(row.kind) << " " << row.rhs << " " << row.coef.size();
    for (const auto& [c, v] : row.coef) os << " " << c << " " << v;
    os << "\n";
  }
}

}  // namespace sitecoord
