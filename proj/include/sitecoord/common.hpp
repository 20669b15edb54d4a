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

#ifndef SITECOORD_COMMON_HPP_
#define SITECOORD_COMMON_HPP_

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace sitecoord {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scenario document or override failed validation. `field()` is a dotted path
// into the document, e.g. "vehicles[2].v_min".
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

// Speed dropped below the integrator floor; the spatial model has a 1/v term.
class SingularityError : public Error {
 public:
  SingularityError(double position, double speed);
  double position() const { return position_; }
  double speed() const { return speed_; }

 private:
  double position_;
  double speed_;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace sitecoord

#endif  // SITECOORD_COMMON_HPP_
