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

// Time-slot schedules (CZ entry/exit times per vehicle) and crossing orders.

#ifndef SITECOORD_SCHEDULE_HPP_
#define SITECOORD_SCHEDULE_HPP_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sitecoord/site_model.hpp"

namespace sitecoord {

struct TimeSlot {
  std::string zone_id;
  double t_in = 0.0;
  double t_out = 0.0;
};

// Positions along a vehicle's path whose passing times parameterize its
// vehicle problem: every zone's p_in and p_out, plus p_in + c and p_out + c of
// merge-split zones with a nonzero offset c. Sorted, unique, clamped to the
// path.
std::vector<double> parameter_positions(const Scenario& scenario,
                                        const std::string& vehicle_id);

struct TimeSlotSchedule {
  // vehicle id -> (position, time) sorted by position.
  std::map<std::string, std::vector<std::pair<double, double>>> times;

  // Throws Error if the vehicle has no parameter at that position.
  double time_at(const std::string& vehicle_id, double position) const;
  // Zones of the vehicle in canonical order with their entry/exit times.
  std::vector<TimeSlot> slots(const Scenario& scenario,
                              const std::string& vehicle_id) const;
  std::vector<double> values(const std::string& vehicle_id) const;
};

// zone id -> vehicle ids in crossing order.
using CrossingOrders = std::map<std::string, std::vector<std::string>>;

}  // namespace sitecoord

#endif  // SITECOORD_SCHEDULE_HPP_
