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

#include "sitecoord/coordinator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace sitecoord {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs f(0..n-1), concurrently when asked; rethrows the first failure.
template <typename T>
std::vector<T> fan_out(int n, bool parallel, const std::function<T(int)>& f) {
  std::vector<T> out;
  out.reserve(n);
  if (!parallel || n <= 1) {
    for (int i = 0; i < n; ++i) out.push_back(f(i));
    return out;
  }
  std::vector<std::future<T>> futures;
  for (int i = 0; i < n; ++i) futures.push_back(std::async(std::launch::async, f, i));
  for (auto& fu : futures) out.push_back(fu.get());
  return out;
}

// Piecewise-linear t(p) on the trajectory's own nodes; no extrapolation.
class TimeCurve {
 public:
  explicit TimeCurve(const Trajectory& tr) : p_(tr.grid), t_(tr.t) {}

  double operator()(double p) const {
    if (p <= p_.front()) return t_.front();
    if (p >= p_.back()) return t_.back();
    const std::size_t hi = std::upper_bound(p_.begin(), p_.end(), p) - p_.begin();
    const double w = (p - p_[hi - 1]) / (p_[hi] - p_[hi - 1]);
    return t_[hi - 1] + w * (t_[hi] - t_[hi - 1]);
  }
  double length() const { return p_.back(); }
  double mean_cell() const { return p_.back() / static_cast<double>(p_.size() - 1); }

 private:
  std::vector<double> p_;
  std::vector<double> t_;
};

const Trajectory& trajectory_of(const std::vector<Trajectory>& trs, const std::string& id) {
  for (const Trajectory& tr : trs) {
    if (tr.vehicle_id == id) return tr;
  }
  throw Error("audit: no trajectory for vehicle '" + id + "'");
}

void audit_intersection(const ConflictZone& zone, const ZoneMember& a, const ZoneMember& b,
                        const TimeCurve& ta, const TimeCurve& tb, const AuditSettings& settings,
                        AuditReport& report) {
  const bool a_first = ta(a.p_in) <= tb(b.p_in);
  const ZoneMember& lead = a_first ? a : b;
  const ZoneMember& follow = a_first ? b : a;
  const TimeCurve& tl = a_first ? ta : tb;
  const TimeCurve& tf = a_first ? tb : ta;
  const double margin = tf(follow.p_in) - tl(lead.p_out);
  report.intersection_margins.push_back({zone.id, lead.vehicle_id, follow.vehicle_id, margin});
  if (margin < -settings.tolerance) {
    report.violations.push_back(
        {zone.id, "intersection", lead.vehicle_id, follow.vehicle_id, margin, lead.p_out});
  }
}

std::vector<GapSample> gap_profile(const ZoneMember& lead, const ZoneMember& follow,
                                   const TimeCurve& tl, const TimeCurve& tf,
                                   const AuditSettings& settings) {
  const double c = follow.offset;
  const double shift = follow.p_in + c - lead.p_in;
  std::vector<GapSample> out;
  auto add = [&](const char* check, double p, double q) {
    out.push_back({check, p, tf(q) - tl(p)});
  };
  add("merge_entry", lead.p_in, std::clamp(follow.p_in + c, 0.0, tf.length()));
  const double step = std::min(tl.mean_cell(), tf.mean_cell()) / settings.density;
  const int samples = std::max(1, static_cast<int>(std::ceil((lead.p_out - lead.p_in) / step)));
  for (int i = 1; i < samples; ++i) {
    const double p = lead.p_in + (lead.p_out - lead.p_in) * i / samples;
    const double q = p + shift;
    if (q < 0.0 || q > tf.length()) continue;
    add("merge_interior", p, q);
  }
  add("merge_exit", lead.p_out, std::clamp(follow.p_out + c, 0.0, tf.length()));
  return out;
}

void audit_merge(const ConflictZone& zone, const ZoneMember& a, const ZoneMember& b,
                 const TimeCurve& ta, const TimeCurve& tb, const AuditSettings& settings,
                 AuditReport& report) {
  const bool a_first = ta(a.p_in) <= tb(b.p_in);
  const ZoneMember& lead = a_first ? a : b;
  const ZoneMember& follow = a_first ? b : a;
  const double dt = follow.time_headway;
  const std::vector<GapSample> profile =
      gap_profile(lead, follow, a_first ? ta : tb, a_first ? tb : ta, settings);

  MergeGap gap{zone.id, lead.vehicle_id, follow.vehicle_id,
               std::numeric_limits<double>::infinity(), dt, lead.p_in};
  const GapSample* worst = nullptr;
  for (const GapSample& g : profile) {
    if (g.gap < gap.min_gap) {
      gap.min_gap = g.gap;
      gap.position = g.leader_position;
      worst = &g;
    }
  }
  report.merge_gaps.push_back(gap);
  if (gap.min_gap - dt < -settings.tolerance) {
    report.violations.push_back({zone.id, worst->check, lead.vehicle_id, follow.vehicle_id,
                                 gap.min_gap - dt, worst->leader_position});
  }
}

std::vector<Trajectory> constant_speed_guesses(const TranscribedNlp& nlp) {
  std::vector<Trajectory> out;
  for (const VehicleBlock& b : nlp.vehicles) out.push_back(initial_guess_from(b));
  return out;
}

std::string describe(const CrossingOrders& orders) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [zone, seq] : orders) {
    os << (first ? "" : ", ") << zone << ": ";
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " < " : "") << seq[i];
    first = false;
  }
  return os.str();
}

}  // namespace

int AuditReport::violated_zones() const {
  std::set<std::string> zones;
  for (const ZoneViolation& v : violations) zones.insert(v.zone_id);
  return static_cast<int>(zones.size());
}

AuditReport audit(const Scenario& scenario, const std::vector<Trajectory>& trajectories,
                  const AuditSettings& settings) {
  AuditReport report;
  for (const ConflictZone& zone : scenario.zones) {
    for (std::size_t i = 0; i < zone.members.size(); ++i) {
      for (std::size_t j = i + 1; j < zone.members.size(); ++j) {
        const ZoneMember& a = zone.members[i];
        const ZoneMember& b = zone.members[j];
        const TimeCurve ta(trajectory_of(trajectories, a.vehicle_id));
        const TimeCurve tb(trajectory_of(trajectories, b.vehicle_id));
        if (zone.kind == ZoneKind::kIntersection) {
          audit_intersection(zone, a, b, ta, tb, settings, report);
        } else {
          audit_merge(zone, a, b, ta, tb, settings, report);
        }
      }
    }
  }
  return report;
}

std::vector<GapSample> merge_gap_profile(const ConflictZone& zone, const std::string& leader,
                                         const std::string& follower,
                                         const std::vector<Trajectory>& trajectories,
                                         const AuditSettings& settings) {
  const ZoneMember* lead = zone.member(leader);
  const ZoneMember* follow = zone.member(follower);
  if (lead == nullptr || follow == nullptr) {
    throw Error("merge_gap_profile: '" + leader + "' and '" + follower + "' are not both in " +
                zone.id);
  }
  return gap_profile(*lead, *follow, TimeCurve(trajectory_of(trajectories, leader)),
                     TimeCurve(trajectory_of(trajectories, follower)), settings);
}

const char* to_string(CoordinationMode mode) {
  return mode == CoordinationMode::kUncoordinated ? "uncoordinated" : "coordinated";
}

TimeSlotSchedule schedule_from(const Scenario& scenario,
                               const std::vector<Trajectory>& trajectories) {
  TimeSlotSchedule s;
  for (const Trajectory& tr : trajectories) {
    for (double p : parameter_positions(scenario, tr.vehicle_id)) {
      s.times[tr.vehicle_id].emplace_back(p, tr.time_at(p));
    }
  }
  return s;
}

CoordinationResult run_uncoordinated(const Scenario& scenario,
                                     const CoordinatorSettings& settings) {
  const auto start = Clock::now();
  CoordinationResult res;
  res.mode = CoordinationMode::kUncoordinated;
  const int n = static_cast<int>(scenario.num_vehicles());
  const std::vector<NlpSolution> sols =
      fan_out<NlpSolution>(n, settings.parallel, [&](int i) {
        const std::string& id = scenario.paths[i].vehicle_id;
        const TranscribedNlp nlp = transcribe(scenario, {id});
        NlpSolution sol = solve_sqp(nlp, constant_speed_guesses(nlp), settings.sqp);
        if (sol.status != NlpStatus::kOptimal) {
          throw SolverError("uncoordinated problem of '" + id + "' ended " +
                            to_string(sol.status));
        }
        spdlog::info("uncoordinated '{}': objective {:.6f} in {} iterations", id, sol.objective,
                     sol.iterations);
        return sol;
      });
  for (const NlpSolution& sol : sols) {
    res.trajectories.push_back(sol.trajectories.front());
    res.vehicle_objectives.push_back(sol.objective);
    res.total_objective += sol.objective;
    res.kkt_residual = std::max(res.kkt_residual, sol.kkt_residual);
    res.max_defect = std::max(res.max_defect, sol.max_defect);
    res.max_violation = std::max(res.max_violation, sol.max_violation);
    res.iterations = std::max(res.iterations, sol.iterations);
  }
  res.schedule = schedule_from(scenario, res.trajectories);
  res.audit = audit(scenario, res.trajectories, settings.audit);
  res.timing.uncoordinated = seconds_since(start);
  res.timing.total = res.timing.uncoordinated;
  return res;
}

CoordinationResult solve_fixed_order(const Scenario& scenario, const CrossingOrders& orders,
                                     const std::vector<Trajectory>& guess,
                                     const CoordinatorSettings& settings) {
  const auto start = Clock::now();
  const TranscribedNlp nlp = transcribe(scenario, {}, &orders);
  const NlpSolution sol =
      solve_sqp(nlp, guess.empty() ? constant_speed_guesses(nlp) : guess, settings.sqp);
  CoordinationResult res;
  res.mode = CoordinationMode::kCoordinated;
  res.status = sol.status;
  res.orders = orders;
  res.trajectories = sol.trajectories;
  res.vehicle_objectives = sol.vehicle_objectives;
  res.total_objective = sol.objective;
  res.kkt_residual = sol.kkt_residual;
  res.max_defect = sol.max_defect;
  res.max_violation = sol.max_violation;
  res.iterations = sol.iterations;
  res.schedule = schedule_from(scenario, res.trajectories);
  res.audit = audit(scenario, res.trajectories, settings.audit);
  res.timing.fixed_order = seconds_since(start);
  if (sol.status == NlpStatus::kInfeasible) {
    spdlog::warn("fixed-order problem infeasible for {} (elastic residual {:.3e})",
                 describe(orders), sol.elastic_residual);
  }
  return res;
}

CoordinationResult run_coordinated(const Scenario& scenario,
                                   const CoordinatorSettings& settings) {
  const auto start = Clock::now();
  const CoordinationResult free = run_uncoordinated(scenario, settings);
  spdlog::info("stage 1: {} vehicles solved alone in {:.3f} s, {} zone violations",
               scenario.num_vehicles(), free.timing.uncoordinated, free.audit.violated_zones());

  auto t = Clock::now();
  std::vector<int> with_zones;
  for (std::size_t i = 0; i < scenario.num_vehicles(); ++i) {
    if (!scenario.zones_of(scenario.paths[i].vehicle_id).empty()) {
      with_zones.push_back(static_cast<int>(i));
    }
  }
  std::vector<ValueExpansion> expansions = fan_out<ValueExpansion>(
      static_cast<int>(with_zones.size()), settings.parallel, [&](int k) {
        const int i = with_zones[k];
        return vehicle_value_and_sensitivities(scenario, scenario.paths[i].vehicle_id,
                                               free.schedule, settings.sensitivity,
                                               &free.trajectories[i]);
      });
  const double t_sens = seconds_since(t);
  spdlog::info("stage 2: {} value expansions in {:.3f} s", expansions.size(), t_sens);

  t = Clock::now();
  const MiqpModel model = build_miqp(scenario, expansions, settings.miqp);
  if (!settings.miqp_dump_path.empty()) {
    std::ofstream out(settings.miqp_dump_path);
    if (!out) throw Error("cannot write " + settings.miqp_dump_path);
    write_miqp(out, model);
  }
  MiqpResult miqp = solve_bnb(scenario, model, settings.miqp);
  const double t_miqp = seconds_since(t);
  spdlog::info("stage 3: MIQP with {} binaries, {} nodes in {:.3f} s: {}", model.num_binaries(),
               miqp.stats.nodes, t_miqp, describe(miqp.orders));

  CoordinationResult res = solve_fixed_order(scenario, miqp.orders, free.trajectories, settings);
  spdlog::info("stage 4: fixed-order problem {} after {} iterations in {:.3f} s",
               to_string(res.status), res.iterations, res.timing.fixed_order);
  if (res.status == NlpStatus::kInfeasible) {
    throw SolverError("fixed-order problem infeasible for orders " + describe(miqp.orders));
  }
  res.miqp = std::move(miqp);
  res.expansions = std::move(expansions);
  res.timing.uncoordinated = free.timing.uncoordinated;
  res.timing.sensitivity = t_sens;
  res.timing.miqp = t_miqp;
  res.timing.total = seconds_since(start);
  return res;
}

std::vector<CrossingOrders> enumerate_orders(const Scenario& scenario) {
  std::vector<CrossingOrders> out{CrossingOrders{}};
  for (const ConflictZone& zone : scenario.zones) {
    std::vector<std::string> members;
    for (const ZoneMember& m : zone.members) members.push_back(m.vehicle_id);
    std::sort(members.begin(), members.end());
    std::vector<CrossingOrders> next;
    do {
      for (const CrossingOrders& partial : out) {
        CrossingOrders o = partial;
        o[zone.id] = members;
        next.push_back(std::move(o));
      }
    } while (std::next_permutation(members.begin(), members.end()));
    out = std::move(next);
  }
  return out;
}

}  // namespace sitecoord
