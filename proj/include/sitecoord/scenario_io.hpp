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

// Scenario documents: a YAML tree with `vehicles`, `zones` and `grid`.
//
//   grid: {N: 100}
//   vehicle_defaults:            # optional, merged under each vehicle
//     v_min: {value: 3.6, unit: km/h}
//   vehicles:
//     - id: red
//       waypoints: [[0, 0], [100, 0]]
//       v_max: {value: 90, unit: km/h}   # plain numbers are m/s
//       ...
//   zones: auto                  # or {auto: {intersection_margin: 5, ...}}
//                                # or an explicit list of zones
//
// See README.md for the full key list.

#ifndef SITECOORD_SCENARIO_IO_HPP_
#define SITECOORD_SCENARIO_IO_HPP_

#include <filesystem>
#include <string>

#include "sitecoord/site_model.hpp"

namespace sitecoord {

// Parses and validates. Throws ValidationError with a field path.
Scenario load_scenario(const std::string& text);
Scenario load_scenario_file(const std::filesystem::path& path);

// Emits SI values at full precision; load_scenario(save_scenario(s)) == s.
std::string save_scenario(const Scenario& scenario);

}  // namespace sitecoord

#endif  // SITECOORD_SCENARIO_IO_HPP_
