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

// Site geometry: vehicle paths along their routes, curvature, and conflict
// zones (mutually exclusive stretches of road shared by two or more paths).

#ifndef SITECOORD_SITE_MODEL_HPP_
#define SITECOORD_SITE_MODEL_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sitecoord {

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Waypoint&) const = default;
};

// Arc-length parameterized route of one vehicle.
struct Path {
  std::string vehicle_id;
  std::vector<Waypoint> waypoints;
  std::vector<double> arclength;  // cumulative, starts at 0
  std::vector<double> curvature;  // 1/m at each waypoint, nonnegative

  double length() const { return arclength.back(); }
  // Piecewise-linear interpolation of the waypoint samples; clamps outside.
  double curvature_at(double s) const;
  Waypoint point_at(double s) const;

  bool operator==(const Path&) const = default;
};

// Menger (circumscribed circle) curvature at each waypoint. Endpoints copy
// their neighbour. Throws GeometryError on repeated consecutive waypoints.
std::vector<double> compute_curvature(std::span<const Waypoint> waypoints);

// Centered moving average; window 1 is the identity.
std::vector<double> smooth_curvature(std::span<const double> curvature,
                                     int window);

// Builds arclength and smoothed curvature. Throws GeometryError for fewer
// than two waypoints or non-finite / repeated points.
Path make_path(std::string vehicle_id, std::vector<Waypoint> waypoints,
               int smoothing_window = 3);

enum class ZoneKind { kIntersection, kMergeSplit };

const char* to_string(ZoneKind kind);

struct ZoneMember {
  std::string vehicle_id;
  double p_in = 0.0;
  double p_out = 0.0;
  double time_headway = 0.0;  // merge-split only
  double offset = 0.0;        // merge-split only
  bool operator==(const ZoneMember&) const = default;
};

struct ConflictZone {
  std::string id;
  ZoneKind kind = ZoneKind::kIntersection;
  std::vector<ZoneMember> members;

  const ZoneMember* member(const std::string& vehicle_id) const;
  bool operator==(const ConflictZone&) const = default;
};

struct DetectionParams {
  double intersection_margin = 5.0;
  double merge_margin = 15.0;
  double lateral_threshold = 2.0;
  // Close stretches at least this long (on either path) are merge-splits;
  // shorter ones are treated as point crossings.
  double min_merge_length = 20.0;
  double time_headway = 0.5;
  double offset = 0.0;
  bool operator==(const DetectionParams&) const = default;
};

// Pairwise detection. Output is canonicalized (see canonicalize_zones) with
// ids I1.., M1.. assigned in that order.
std::vector<ConflictZone> detect_conflict_zones(std::span<const Path> paths,
                                                const DetectionParams& params);

struct Weights {
  double P = 1.0;  // acceleration
  double Q = 1.0;  // jerk
  double R = 10.0; // final time
  bool operator==(const Weights&) const = default;
};

// All SI: m/s, m/s^2.
struct VehicleParams {
  double v_min = 1.0;
  double v_max = 25.0;
  double a_lon_max = 4.0;
  double a_lat_max = 2.0;
  double v_initial = 50.0 / 3.6;
  double a_initial = 0.0;
  Weights weights;
  bool operator==(const VehicleParams&) const = default;
};

struct Scenario {
  std::vector<Path> paths;
  std::vector<VehicleParams> params;  // parallel to paths
  std::vector<ConflictZone> zones;
  int grid_n = 100;
  int curvature_window = 3;
  // Present when zones came from detection; kept so documents round-trip.
  std::optional<DetectionParams> detection;

  std::size_t num_vehicles() const { return paths.size(); }
  // Throws ValidationError if unknown.
  std::size_t vehicle_index(const std::string& vehicle_id) const;
  // Zones that contain the vehicle, in canonical order.
  std::vector<const ConflictZone*> zones_of(const std::string& vehicle_id) const;

  bool operator==(const Scenario&) const = default;
};

// Drops zones with fewer than two members, orders members by scenario
// vehicle order and zones by (first member p_in, kind, remaining members).
void canonicalize_zones(const Scenario& scenario,
                        std::vector<ConflictZone>& zones);

// Throws ValidationError naming the offending field.
void validate(const Scenario& scenario);

}  // namespace sitecoord

#endif  // SITECOORD_SITE_MODEL_HPP_
