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

#include "sitecoord/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sitecoord/common.hpp"

namespace sitecoord {
namespace {

constexpr double kPositionTolerance = 1e-9;

}  // namespace

std::vector<double> parameter_positions(const Scenario& scenario,
                                        const std::string& vehicle_id) {
  const double length = scenario.paths[scenario.vehicle_index(vehicle_id)].length();
  std::vector<double> out;
  for (const ConflictZone* zone : scenario.zones_of(vehicle_id)) {
    const ZoneMember& m = *zone->member(vehicle_id);
    out.push_back(m.p_in);
    out.push_back(m.p_out);
    if (zone->kind == ZoneKind::kMergeSplit && m.offset != 0.0) {
      out.push_back(std::clamp(m.p_in + m.offset, 0.0, length));
      out.push_back(std::clamp(m.p_out + m.offset, 0.0, length));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [](double a, double b) { return std::abs(a - b) <= kPositionTolerance; }),
            out.end());
  return out;
}

double TimeSlotSchedule::time_at(const std::string& vehicle_id, double position) const {
  const auto it = times.find(vehicle_id);
  if (it != times.end()) {
    for (const auto& [p, t] : it->second) {
      if (std::abs(p - position) <= kPositionTolerance) return t;
    }
  }
  std::ostringstream os;
  os << "schedule has no time for vehicle '" << vehicle_id << "' at p = " << position;
  throw Error(os.str());
}

std::vector<TimeSlot> TimeSlotSchedule::slots(const Scenario& scenario,
                                              const std::string& vehicle_id) const {
  std::vector<TimeSlot> out;
  for (const ConflictZone* zone : scenario.zones_of(vehicle_id)) {
    const ZoneMember& m = *zone->member(vehicle_id);
    out.push_back({zone->id, time_at(vehicle_id, m.p_in), time_at(vehicle_id, m.p_out)});
  }
  return out;
}

std::vector<double> TimeSlotSchedule::values(const std::string& vehicle_id) const {
  std::vector<double> out;
  const auto it = times.find(vehicle_id);
  if (it == times.end()) return out;
  for (const auto& pt : it->second) out.push_back(pt.second);
  return out;
}

}  // namespace sitecoord
