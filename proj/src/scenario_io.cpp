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

#include "sitecoord/scenario_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "sitecoord/common.hpp"

namespace sitecoord {
namespace {

double as_double(const YAML::Node& node, const std::string& field) {
  if (!node || !node.IsScalar()) {
    throw ValidationError(field, "expected a number");
  }
  try {
    return node.as<double>();
  } catch (const YAML::Exception&) {
    throw ValidationError(field, "expected a number, got '" + node.Scalar() + "'");
  }
}

int as_int(const YAML::Node& node, const std::string& field) {
  const double v = as_double(node, field);
  if (v != std::floor(v)) throw ValidationError(field, "expected an integer");
  return static_cast<int>(v);
}

double unit_factor(const std::string& unit, const std::string& field) {
  if (unit == "m/s" || unit == "mps") return 1.0;
  if (unit == "km/h" || unit == "kph" || unit == "kmh") return 1.0 / 3.6;
  throw ValidationError(field + ".unit", "unknown speed unit '" + unit + "' (m/s or km/h)");
}

// Speed as a bare number (m/s), {value, unit}, or "50 km/h".
double as_speed(const YAML::Node& node, const std::string& field) {
  if (!node) throw ValidationError(field, "missing");
  if (node.IsMap()) {
    const double value = as_double(node["value"], field + ".value");
    const std::string unit = node["unit"] ? node["unit"].as<std::string>() : "m/s";
    return value * unit_factor(unit, field);
  }
  if (node.IsScalar()) {
    std::istringstream is(node.Scalar());
    double value = 0.0;
    std::string unit;
    if (!(is >> value)) throw ValidationError(field, "expected a speed");
    if (is >> unit) return value * unit_factor(unit, field);
    return value;
  }
  throw ValidationError(field, "expected a speed");
}

YAML::Node lookup(const YAML::Node& vehicle, const YAML::Node& defaults,
                  const char* key) {
  if (vehicle[key]) return vehicle[key];
  if (defaults && defaults[key]) return defaults[key];
  return YAML::Node(YAML::NodeType::Undefined);
}

DetectionParams parse_detection(const YAML::Node& node, const std::string& field) {
  DetectionParams p;
  if (!node || node.IsNull()) return p;
  if (!node.IsMap()) throw ValidationError(field, "expected a map of margins");
  auto opt = [&](const char* key, double& out) {
    if (node[key]) out = as_double(node[key], field + "." + key);
  };
  opt("intersection_margin", p.intersection_margin);
  opt("merge_margin", p.merge_margin);
  opt("lateral_threshold", p.lateral_threshold);
  opt("min_merge_length", p.min_merge_length);
  opt("time_headway", p.time_headway);
  opt("offset", p.offset);
  if (!(p.intersection_margin >= 0.0) || !(p.merge_margin >= 0.0) ||
      !(p.lateral_threshold > 0.0) || !(p.time_headway >= 0.0)) {
    throw ValidationError(field, "margins must be nonnegative and the threshold positive");
  }
  return p;
}

ZoneKind parse_kind(const YAML::Node& node, const std::string& field) {
  const std::string kind = node ? node.as<std::string>() : "";
  if (kind == "intersection") return ZoneKind::kIntersection;
  if (kind == "merge_split" || kind == "merge-split") return ZoneKind::kMergeSplit;
  throw ValidationError(field, "expected 'intersection' or 'merge_split'");
}

void emit_detection(YAML::Emitter& out, const DetectionParams& p) {
  out << YAML::BeginMap;
  out << YAML::Key << "intersection_margin" << YAML::Value << p.intersection_margin;
  out << YAML::Key << "merge_margin" << YAML::Value << p.merge_margin;
  out << YAML::Key << "lateral_threshold" << YAML::Value << p.lateral_threshold;
  out << YAML::Key << "min_merge_length" << YAML::Value << p.min_merge_length;
  out << YAML::Key << "time_headway" << YAML::Value << p.time_headway;
  out << YAML::Key << "offset" << YAML::Value << p.offset;
  out << YAML::EndMap;
}

}  // namespace

Scenario load_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError("document", std::string("malformed document: ") + e.what());
  }
  if (!root.IsMap()) throw ValidationError("document", "expected a map at top level");

  Scenario scenario;
  if (root["grid"]) {
    if (!root["grid"].IsMap()) throw ValidationError("grid", "expected a map");
    if (root["grid"]["N"]) scenario.grid_n = as_int(root["grid"]["N"], "grid.N");
  }
  if (root["curvature_window"]) {
    scenario.curvature_window = as_int(root["curvature_window"], "curvature_window");
    if (scenario.curvature_window < 1) {
      throw ValidationError("curvature_window", "must be at least 1");
    }
  }

  const YAML::Node defaults = root["vehicle_defaults"];
  const YAML::Node vehicles = root["vehicles"];
  if (!vehicles || !vehicles.IsSequence() || vehicles.size() == 0) {
    throw ValidationError("vehicles", "expected a non-empty list");
  }
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const YAML::Node v = vehicles[i];
    const std::string field = "vehicles[" + std::to_string(i) + "]";
    if (!v.IsMap()) throw ValidationError(field, "expected a map");
    if (!v["id"]) throw ValidationError(field + ".id", "missing");
    const std::string id = v["id"].as<std::string>();
    const YAML::Node wps = v["waypoints"];
    if (!wps || !wps.IsSequence()) {
      throw ValidationError(field + ".waypoints", "expected a list of [x, y] pairs");
    }
    std::vector<Waypoint> waypoints;
    for (std::size_t k = 0; k < wps.size(); ++k) {
      const std::string wf = field + ".waypoints[" + std::to_string(k) + "]";
      if (!wps[k].IsSequence() || wps[k].size() != 2) {
        throw ValidationError(wf, "expected [x, y]");
      }
      waypoints.push_back({as_double(wps[k][0], wf + "[0]"), as_double(wps[k][1], wf + "[1]")});
    }
    try {
      scenario.paths.push_back(make_path(id, std::move(waypoints), scenario.curvature_window));
    } catch (const GeometryError& e) {
      throw ValidationError(field + ".waypoints", e.what());
    }

    VehicleParams p;
    auto speed = [&](const char* key, double& out, bool required) {
      const YAML::Node n = lookup(v, defaults, key);
      if (!n) {
        if (required) throw ValidationError(field + "." + key, "missing");
        return;
      }
      out = as_speed(n, field + "." + key);
    };
    auto number = [&](const char* key, double& out, bool required) {
      const YAML::Node n = lookup(v, defaults, key);
      if (!n) {
        if (required) throw ValidationError(field + "." + key, "missing");
        return;
      }
      out = as_double(n, field + "." + key);
    };
    speed("v_min", p.v_min, true);
    speed("v_max", p.v_max, true);
    speed("v_initial", p.v_initial, true);
    number("a_lon_max", p.a_lon_max, true);
    number("a_lat_max", p.a_lat_max, true);
    number("a_initial", p.a_initial, false);
    if (const YAML::Node w = lookup(v, defaults, "weights")) {
      if (!w.IsMap()) throw ValidationError(field + ".weights", "expected {P, Q, R}");
      if (w["P"]) p.weights.P = as_double(w["P"], field + ".weights.P");
      if (w["Q"]) p.weights.Q = as_double(w["Q"], field + ".weights.Q");
      if (w["R"]) p.weights.R = as_double(w["R"], field + ".weights.R");
    }
    scenario.params.push_back(p);
  }

  const YAML::Node zones = root["zones"];
  if (!zones || (zones.IsScalar() && zones.Scalar() == "auto")) {
    scenario.detection = DetectionParams{};
  } else if (zones.IsMap() && zones["auto"]) {
    scenario.detection = parse_detection(zones["auto"], "zones.auto");
  } else if (zones.IsSequence()) {
    for (std::size_t z = 0; z < zones.size(); ++z) {
      const YAML::Node zn = zones[z];
      const std::string field = "zones[" + std::to_string(z) + "]";
      if (!zn.IsMap()) throw ValidationError(field, "expected a map");
      ConflictZone zone;
      zone.id = zn["id"] ? zn["id"].as<std::string>() : "Z" + std::to_string(z + 1);
      zone.kind = parse_kind(zn["kind"], field + ".kind");
      const YAML::Node members = zn["members"];
      if (!members || !members.IsSequence()) {
        throw ValidationError(field + ".members", "expected a list");
      }
      for (std::size_t m = 0; m < members.size(); ++m) {
        const YAML::Node mn = members[m];
        const std::string mf = field + ".members[" + std::to_string(m) + "]";
        if (!mn.IsMap() || !mn["vehicle"]) throw ValidationError(mf + ".vehicle", "missing");
        ZoneMember member;
        member.vehicle_id = mn["vehicle"].as<std::string>();
        member.p_in = as_double(mn["p_in"], mf + ".p_in");
        member.p_out = as_double(mn["p_out"], mf + ".p_out");
        if (zone.kind == ZoneKind::kMergeSplit) {
          member.time_headway = mn["time_headway"]
                                    ? as_double(mn["time_headway"], mf + ".time_headway")
                                    : DetectionParams{}.time_headway;
          member.offset = mn["offset"] ? as_double(mn["offset"], mf + ".offset") : 0.0;
        }
        zone.members.push_back(member);
      }
      scenario.zones.push_back(std::move(zone));
    }
  } else {
    throw ValidationError("zones", "expected 'auto', {auto: {...}} or a list of zones");
  }

  validate(scenario);
  if (scenario.detection) {
    scenario.zones = detect_conflict_zones(scenario.paths, *scenario.detection);
    validate(scenario);
  } else {
    for (std::size_t z = 0; z < scenario.zones.size(); ++z) {
      if (scenario.zones[z].members.size() < 2) {
        throw ValidationError("zones[" + std::to_string(z) + "].members",
                              "a zone needs at least two vehicles");
      }
    }
    canonicalize_zones(scenario, scenario.zones);
  }
  return scenario;
}

Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("scenario", "cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_scenario(buffer.str());
}

std::string save_scenario(const Scenario& scenario) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "grid" << YAML::Value << YAML::Flow << YAML::BeginMap
      << YAML::Key << "N" << YAML::Value << scenario.grid_n << YAML::EndMap;
  out << YAML::Key << "curvature_window" << YAML::Value << scenario.curvature_window;
  out << YAML::Key << "vehicles" << YAML::Value << YAML::BeginSeq;
  for (std::size_t i = 0; i < scenario.paths.size(); ++i) {
    const Path& path = scenario.paths[i];
    const VehicleParams& p = scenario.params[i];
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << path.vehicle_id;
    out << YAML::Key << "waypoints" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& w : path.waypoints) {
      out << YAML::Flow << YAML::BeginSeq << w.x << w.y << YAML::EndSeq;
    }
    out << YAML::EndSeq;
    out << YAML::Key << "v_min" << YAML::Value << p.v_min;
    out << YAML::Key << "v_max" << YAML::Value << p.v_max;
    out << YAML::Key << "v_initial" << YAML::Value << p.v_initial;
    out << YAML::Key << "a_lon_max" << YAML::Value << p.a_lon_max;
    out << YAML::Key << "a_lat_max" << YAML::Value << p.a_lat_max;
    out << YAML::Key << "a_initial" << YAML::Value << p.a_initial;
    out << YAML::Key << "weights" << YAML::Value << YAML::Flow << YAML::BeginMap
        << YAML::Key << "P" << YAML::Value << p.weights.P << YAML::Key << "Q"
        << YAML::Value << p.weights.Q << YAML::Key << "R" << YAML::Value
        << p.weights.R << YAML::EndMap;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "zones" << YAML::Value;
  if (scenario.detection) {
    out << YAML::BeginMap << YAML::Key << "auto" << YAML::Value;
    emit_detection(out, *scenario.detection);
    out << YAML::EndMap;
  } else {
    out << YAML::BeginSeq;
    for (const auto& zone : scenario.zones) {
      out << YAML::BeginMap;
      out << YAML::Key << "id" << YAML::Value << zone.id;
      out << YAML::Key << "kind" << YAML::Value << to_string(zone.kind);
      out << YAML::Key << "members" << YAML::Value << YAML::BeginSeq;
      for (const auto& m : zone.members) {
        out << YAML::Flow << YAML::BeginMap;
        out << YAML::Key << "vehicle" << YAML::Value << m.vehicle_id;
        out << YAML::Key << "p_in" << YAML::Value << m.p_in;
        out << YAML::Key << "p_out" << YAML::Value << m.p_out;
        if (zone.kind == ZoneKind::kMergeSplit) {
          out << YAML::Key << "time_headway" << YAML::Value << m.time_headway;
          out << YAML::Key << "offset" << YAML::Value << m.offset;
        }
        out << YAML::EndMap;
      }
      out << YAML::EndSeq << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace sitecoord
