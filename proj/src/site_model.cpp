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

#include "sitecoord/site_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "sitecoord/common.hpp"

namespace sitecoord {
namespace {

double distance(const Waypoint& a, const Waypoint& b) {
  return std::hypot(b.x - a.x, b.y - a.y);
}

struct Closest {
  double distance = std::numeric_limits<double>::infinity();
  double arclength = 0.0;
};

// Closest point of `path` to `q`.
Closest closest_on(const Path& path, const Waypoint& q) {
  Closest best;
  for (std::size_t i = 0; i + 1 < path.waypoints.size(); ++i) {
    const Waypoint& a = path.waypoints[i];
    const Waypoint& b = path.waypoints[i + 1];
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double u = ((q.x - a.x) * dx + (q.y - a.y) * dy) / len2;
    u = std::clamp(u, 0.0, 1.0);
    const double d = std::hypot(a.x + u * dx - q.x, a.y + u * dy - q.y);
    if (d < best.distance) {
      best.distance = d;
      best.arclength = path.arclength[i] + u * (path.arclength[i + 1] -
                                                path.arclength[i]);
    }
  }
  return best;
}

struct Run {
  double begin = 0.0;
  double end = 0.0;
  double closest = 0.0;  // arclength of minimum separation inside the run
};

// Maximal stretches of `a` lying within `threshold` of `b`.
std::vector<Run> close_runs(const Path& a, const Path& b, double threshold) {
  auto dist = [&](double s) {
    return closest_on(b, a.point_at(s)).distance;
  };
  const double step = std::min(0.5, threshold / 4.0);
  const double length = a.length();
  const int samples = std::max(2, static_cast<int>(std::ceil(length / step)) + 1);
  std::vector<double> s(samples);
  std::vector<double> d(samples);
  for (int i = 0; i < samples; ++i) {
    s[i] = std::min(length, i * length / (samples - 1));
    d[i] = dist(s[i]);
  }
  auto refine_edge = [&](double inside, double outside) {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (inside + outside);
      (dist(mid) <= threshold ? inside : outside) = mid;
    }
    return 0.5 * (inside + outside);
  };
  std::vector<Run> runs;
  int i = 0;
  while (i < samples) {
    if (d[i] > threshold) {
      ++i;
      continue;
    }
    const int first = i;
    int arg_min = i;
    while (i < samples && d[i] <= threshold) {
      if (d[i] < d[arg_min]) arg_min = i;
      ++i;
    }
    const int last = i - 1;
    Run run;
    run.begin = first == 0 ? 0.0 : refine_edge(s[first], s[first - 1]);
    run.end = last == samples - 1 ? length : refine_edge(s[last], s[last + 1]);
    // Golden-section search around the sampled minimum.
    double lo = s[std::max(arg_min - 1, 0)];
    double hi = s[std::min(arg_min + 1, samples - 1)];
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - ratio * (hi - lo);
    double x2 = lo + ratio * (hi - lo);
    double f1 = dist(x1);
    double f2 = dist(x2);
    for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - ratio * (hi - lo);
        f1 = dist(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + ratio * (hi - lo);
        f2 = dist(x2);
      }
    }
    run.closest = 0.5 * (lo + hi);
    if (d[arg_min] < dist(run.closest)) run.closest = s[arg_min];
    runs.push_back(run);
  }
  return runs;
}

ZoneMember make_member(const Path& path, double begin, double end,
                       double margin) {
  ZoneMember m;
  m.vehicle_id = path.vehicle_id;
  m.p_in = std::max(0.0, begin - margin);
  m.p_out = std::min(path.length(), end + margin);
  return m;
}

bool intervals_touch(const ZoneMember& a, const ZoneMember& b) {
  return a.p_in <= b.p_out && b.p_in <= a.p_out;
}

std::set<std::string> member_set(const ConflictZone& z) {
  std::set<std::string> ids;
  for (const auto& m : z.members) ids.insert(m.vehicle_id);
  return ids;
}

// Union of zones with equal kind and member set whose intervals overlap on
// every member.
void merge_overlapping(std::vector<ConflictZone>& zones) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < zones.size() && !changed; ++i) {
      for (std::size_t j = i + 1; j < zones.size() && !changed; ++j) {
        if (zones[i].kind != zones[j].kind) continue;
        if (member_set(zones[i]) != member_set(zones[j])) continue;
        bool overlap = true;
        for (const auto& m : zones[i].members) {
          if (!intervals_touch(m, *zones[j].member(m.vehicle_id))) {
            overlap = false;
          }
        }
        if (!overlap) continue;
        for (auto& m : zones[i].members) {
          const ZoneMember* other = zones[j].member(m.vehicle_id);
          m.p_in = std::min(m.p_in, other->p_in);
          m.p_out = std::max(m.p_out, other->p_out);
        }
        zones.erase(zones.begin() + static_cast<std::ptrdiff_t>(j));
        changed = true;
      }
    }
  }
}

void canonicalize_by(const std::vector<std::string>& vehicle_order,
                     std::vector<ConflictZone>& zones) {
  auto rank = [&](const std::string& id) {
    const auto it = std::find(vehicle_order.begin(), vehicle_order.end(), id);
    return static_cast<std::size_t>(it - vehicle_order.begin());
  };
  std::erase_if(zones, [](const ConflictZone& z) { return z.members.size() < 2; });
  for (auto& z : zones) {
    std::stable_sort(z.members.begin(), z.members.end(),
                     [&](const ZoneMember& a, const ZoneMember& b) {
                       return rank(a.vehicle_id) < rank(b.vehicle_id);
                     });
  }
  std::stable_sort(zones.begin(), zones.end(),
                   [&](const ConflictZone& a, const ConflictZone& b) {
                     if (a.members[0].p_in != b.members[0].p_in) {
                       return a.members[0].p_in < b.members[0].p_in;
                     }
                     if (a.kind != b.kind) return a.kind < b.kind;
                     const std::size_t n = std::min(a.members.size(), b.members.size());
                     for (std::size_t k = 0; k < n; ++k) {
                       const auto ra = rank(a.members[k].vehicle_id);
                       const auto rb = rank(b.members[k].vehicle_id);
                       if (ra != rb) return ra < rb;
                     }
                     return a.members.size() < b.members.size();
                   });
}

}  // namespace

SingularityError::SingularityError(double position, double speed)
    : Error([&] {
        std::ostringstream os;
        os << "speed " << speed << " m/s below integrator floor at position "
           << position << " m";
        return os.str();
      }()),
      position_(position),
      speed_(speed) {}

double Path::curvature_at(double s) const {
  if (s <= arclength.front()) return curvature.front();
  if (s >= arclength.back()) return curvature.back();
  const auto it = std::upper_bound(arclength.begin(), arclength.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - arclength.begin()) - 1;
  const double w = (s - arclength[i]) / (arclength[i + 1] - arclength[i]);
  return (1.0 - w) * curvature[i] + w * curvature[i + 1];
}

Waypoint Path::point_at(double s) const {
  if (s <= 0.0) return waypoints.front();
  if (s >= arclength.back()) return waypoints.back();
  const auto it = std::upper_bound(arclength.begin(), arclength.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - arclength.begin()) - 1;
  const double w = (s - arclength[i]) / (arclength[i + 1] - arclength[i]);
  return {waypoints[i].x + w * (waypoints[i + 1].x - waypoints[i].x),
          waypoints[i].y + w * (waypoints[i + 1].y - waypoints[i].y)};
}

std::vector<double> compute_curvature(std::span<const Waypoint> waypoints) {
  const std::size_t n = waypoints.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (distance(waypoints[i], waypoints[i + 1]) == 0.0) {
      std::ostringstream os;
      os << "repeated waypoint at index " << i + 1 << " (" << waypoints[i].x
         << ", " << waypoints[i].y << ")";
      throw GeometryError(os.str());
    }
  }
  std::vector<double> kappa(n, 0.0);
  if (n < 3) return kappa;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Waypoint& p = waypoints[i - 1];
    const Waypoint& q = waypoints[i];
    const Waypoint& r = waypoints[i + 1];
    const double cross = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    const double denom = distance(p, q) * distance(q, r) * distance(p, r);
    kappa[i] = denom > 0.0 ? 2.0 * std::abs(cross) / denom : 0.0;
  }
  kappa.front() = kappa[1];
  kappa.back() = kappa[n - 2];
  return kappa;
}

std::vector<double> smooth_curvature(std::span<const double> curvature,
                                     int window) {
  std::vector<double> out(curvature.begin(), curvature.end());
  if (window <= 1 || curvature.size() < 3) return out;
  const int half = window / 2;
  const int n = static_cast<int>(curvature.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double sum = 0.0;
    for (int k = lo; k <= hi; ++k) sum += curvature[k];
    out[i] = sum / (hi - lo + 1);
  }
  return out;
}

Path make_path(std::string vehicle_id, std::vector<Waypoint> waypoints,
               int smoothing_window) {
  if (waypoints.size() < 2) {
    throw GeometryError("path '" + vehicle_id + "' needs at least 2 waypoints");
  }
  for (const auto& w : waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) {
      throw GeometryError("path '" + vehicle_id + "' has a non-finite waypoint");
    }
  }
  Path path;
  path.vehicle_id = std::move(vehicle_id);
  path.curvature = smooth_curvature(compute_curvature(waypoints), smoothing_window);
  path.arclength.resize(waypoints.size());
  path.arclength[0] = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    path.arclength[i] = path.arclength[i - 1] + distance(waypoints[i - 1], waypoints[i]);
  }
  path.waypoints = std::move(waypoints);
  return path;
}

const char* to_string(ZoneKind kind) {
  return kind == ZoneKind::kIntersection ? "intersection" : "merge_split";
}

const ZoneMember* ConflictZone::member(const std::string& vehicle_id) const {
  for (const auto& m : members) {
    if (m.vehicle_id == vehicle_id) return &m;
  }
  return nullptr;
}

std::vector<ConflictZone> detect_conflict_zones(std::span<const Path> paths,
                                                const DetectionParams& params) {
  // Pairs are processed in vehicle-id order so the result does not depend on
  // the order of `paths`.
  std::vector<std::size_t> order(paths.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return paths[a].vehicle_id < paths[b].vehicle_id;
  });

  std::vector<ConflictZone> zones;
  const double thr = params.lateral_threshold;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const Path& a = paths[order[oi]];
      const Path& b = paths[order[oj]];
      const std::vector<Run> runs_a = close_runs(a, b, thr);
      if (runs_a.empty()) continue;
      const std::vector<Run> runs_b = close_runs(b, a, thr);
      for (const Run& ra : runs_a) {
        // Runs on b that correspond to this stretch of a.
        double b_begin = std::numeric_limits<double>::infinity();
        double b_end = -b_begin;
        for (const Run& rb : runs_b) {
          const double proj = closest_on(a, b.point_at(rb.closest)).arclength;
          const double pb = closest_on(a, b.point_at(rb.begin)).arclength;
          const double pe = closest_on(a, b.point_at(rb.end)).arclength;
          const double lo = std::min({proj, pb, pe});
          const double hi = std::max({proj, pb, pe});
          if (hi >= ra.begin - thr && lo <= ra.end + thr) {
            b_begin = std::min(b_begin, rb.begin);
            b_end = std::max(b_end, rb.end);
          }
        }
        if (!(b_begin <= b_end)) {
          b_begin = closest_on(b, a.point_at(ra.begin)).arclength;
          b_end = closest_on(b, a.point_at(ra.end)).arclength;
          if (b_begin > b_end) std::swap(b_begin, b_end);
        }
        ConflictZone zone;
        const bool merge = std::max(ra.end - ra.begin, b_end - b_begin) >=
                           params.min_merge_length;
        if (merge) {
          zone.kind = ZoneKind::kMergeSplit;
          ZoneMember ma = make_member(a, ra.begin, ra.end, params.merge_margin);
          ZoneMember mb = make_member(b, b_begin, b_end, params.merge_margin);
          for (ZoneMember* m : {&ma, &mb}) {
            m->time_headway = params.time_headway;
            m->offset = params.offset;
          }
          zone.members = {ma, mb};
        } else {
          zone.kind = ZoneKind::kIntersection;
          const double sa = ra.closest;
          const double sb = closest_on(b, a.point_at(sa)).arclength;
          zone.members = {
              make_member(a, sa, sa, params.intersection_margin),
              make_member(b, sb, sb, params.intersection_margin)};
        }
        if (zone.members[0].p_in < zone.members[0].p_out &&
            zone.members[1].p_in < zone.members[1].p_out) {
          zones.push_back(std::move(zone));
        }
      }
    }
  }
  merge_overlapping(zones);

  std::vector<std::string> ids;
  for (const auto& p : paths) ids.push_back(p.vehicle_id);
  canonicalize_by(ids, zones);
  int n_int = 0;
  int n_merge = 0;
  for (auto& z : zones) {
    z.id = z.kind == ZoneKind::kIntersection ? "I" + std::to_string(++n_int)
                                             : "M" + std::to_string(++n_merge);
  }
  return zones;
}

std::size_t Scenario::vehicle_index(const std::string& vehicle_id) const {
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (paths[i].vehicle_id == vehicle_id) return i;
  }
  throw ValidationError("vehicle", "unknown vehicle id '" + vehicle_id + "'");
}

std::vector<const ConflictZone*> Scenario::zones_of(
    const std::string& vehicle_id) const {
  std::vector<const ConflictZone*> out;
  for (const auto& z : zones) {
    if (z.member(vehicle_id) != nullptr) out.push_back(&z);
  }
  return out;
}

void canonicalize_zones(const Scenario& scenario,
                        std::vector<ConflictZone>& zones) {
  std::vector<std::string> ids;
  for (const auto& p : scenario.paths) ids.push_back(p.vehicle_id);
  canonicalize_by(ids, zones);
}

void validate(const Scenario& scenario) {
  if (scenario.paths.empty()) {
    throw ValidationError("vehicles", "at least one vehicle is required");
  }
  if (scenario.params.size() != scenario.paths.size()) {
    throw ValidationError("vehicles", "parameter count does not match paths");
  }
  if (scenario.grid_n < 2) {
    throw ValidationError("grid.N", "must be at least 2");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < scenario.paths.size(); ++i) {
    const std::string field = "vehicles[" + std::to_string(i) + "]";
    const Path& path = scenario.paths[i];
    if (!seen.insert(path.vehicle_id).second) {
      throw ValidationError(field + ".id", "duplicate vehicle id '" + path.vehicle_id + "'");
    }
    if (path.waypoints.size() < 2) {
      throw ValidationError(field + ".waypoints", "at least 2 waypoints required");
    }
    for (std::size_t k = 1; k < path.arclength.size(); ++k) {
      if (!(path.arclength[k] > path.arclength[k - 1])) {
        throw ValidationError(field + ".waypoints",
                              "arc length must be strictly increasing");
      }
    }
    for (double k : path.curvature) {
      if (!std::isfinite(k)) {
        throw ValidationError(field + ".waypoints", "curvature is not finite");
      }
    }
    const VehicleParams& p = scenario.params[i];
    auto require = [&](bool ok, const std::string& key, const std::string& msg) {
      if (!ok) throw ValidationError(field + "." + key, msg);
    };
    require(std::isfinite(p.v_min) && p.v_min > 0.0, "v_min",
            "must be positive: the spatial model divides by speed (singular at v = 0)");
    require(std::isfinite(p.v_max) && p.v_max >= p.v_min, "v_max", "must be >= v_min");
    require(std::isfinite(p.v_initial) && p.v_initial >= p.v_min && p.v_initial <= p.v_max,
            "v_initial", "must lie in [v_min, v_max]");
    require(std::isfinite(p.a_lon_max) && p.a_lon_max > 0.0, "a_lon_max", "must be positive");
    require(std::isfinite(p.a_lat_max) && p.a_lat_max > 0.0, "a_lat_max", "must be positive");
    require(std::isfinite(p.a_initial) && p.a_initial <= p.a_lon_max &&
                p.a_initial >= -p.a_lon_max,
            "a_initial", "must lie in [-a_lon_max, a_lon_max]");
    require(p.weights.P >= 0.0 && p.weights.Q >= 0.0 && p.weights.R >= 0.0, "weights",
            "P, Q and R must be nonnegative");
  }
  for (std::size_t z = 0; z < scenario.zones.size(); ++z) {
    const ConflictZone& zone = scenario.zones[z];
    const std::string field = "zones[" + std::to_string(z) + "]";
    if (zone.members.size() < 2) {
      throw ValidationError(field + ".members", "a zone needs at least two vehicles");
    }
    std::set<std::string> ids;
    for (std::size_t m = 0; m < zone.members.size(); ++m) {
      const ZoneMember& member = zone.members[m];
      const std::string mf = field + ".members[" + std::to_string(m) + "]";
      if (!ids.insert(member.vehicle_id).second) {
        throw ValidationError(mf + ".vehicle", "vehicle listed twice");
      }
      const auto it = std::find_if(scenario.paths.begin(), scenario.paths.end(),
                                   [&](const Path& p) { return p.vehicle_id == member.vehicle_id; });
      if (it == scenario.paths.end()) {
        throw ValidationError(mf + ".vehicle", "unknown vehicle '" + member.vehicle_id + "'");
      }
      if (!(member.p_in < member.p_out)) {
        throw ValidationError(mf, "p_in must be less than p_out");
      }
      if (member.p_in < 0.0 || member.p_out > it->length() + 1e-9) {
        throw ValidationError(mf, "zone interval outside the path");
      }
      if (zone.kind == ZoneKind::kIntersection) {
        if (member.time_headway != 0.0 || member.offset != 0.0) {
          throw ValidationError(mf, "time_headway/offset only apply to merge-split zones");
        }
      } else if (!(member.time_headway >= 0.0) || !std::isfinite(member.offset)) {
        throw ValidationError(mf + ".time_headway", "must be nonnegative");
      }
    }
  }
}

}  // namespace sitecoord
