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

// Second-order forward-mode differentiation over a fixed number of inputs.
// Carries value, gradient and (symmetric) Hessian through arithmetic.

#ifndef SITECOORD_JET_HPP_
#define SITECOORD_JET_HPP_

#include <Eigen/Core>

namespace sitecoord {

template <int N>
struct Jet2 {
  using Gradient = Eigen::Matrix<double, N, 1>;
  using Hessian = Eigen::Matrix<double, N, N>;

  double value = 0.0;
  Gradient grad = Gradient::Zero();
  Hessian hess = Hessian::Zero();

  Jet2() = default;
  Jet2(double v) : value(v) {}  // NOLINT: constants promote implicitly

  static Jet2 variable(double v, int index) {
    Jet2 j(v);
    j.grad(index) = 1.0;
    return j;
  }

  // f(x) with f, f', f'' evaluated at x = value.
  Jet2 apply(double f, double df, double d2f) const {
    Jet2 out(f);
    out.grad = df * grad;
    out.hess = df * hess + d2f * grad * grad.transpose();
    return out;
  }
};

template <int N>
Jet2<N> operator+(const Jet2<N>& a, const Jet2<N>& b) {
  Jet2<N> out(a.value + b.value);
  out.grad = a.grad + b.grad;
  out.hess = a.hess + b.hess;
  return out;
}

template <int N>
Jet2<N> operator-(const Jet2<N>& a, const Jet2<N>& b) {
  Jet2<N> out(a.value - b.value);
  out.grad = a.grad - b.grad;
  out.hess = a.hess - b.hess;
  return out;
}

template <int N>
Jet2<N> operator-(const Jet2<N>& a) {
  Jet2<N> out(-a.value);
  out.grad = -a.grad;
  out.hess = -a.hess;
  return out;
}

template <int N>
Jet2<N> operator*(const Jet2<N>& a, const Jet2<N>& b) {
  Jet2<N> out(a.value * b.value);
  out.grad = a.value * b.grad + b.value * a.grad;
  out.hess = a.value * b.hess + b.value * a.hess + a.grad * b.grad.transpose() +
             b.grad * a.grad.transpose();
  return out;
}

template <int N>
Jet2<N> operator*(double s, const Jet2<N>& a) {
  Jet2<N> out(s * a.value);
  out.grad = s * a.grad;
  out.hess = s * a.hess;
  return out;
}

template <int N>
Jet2<N> operator*(const Jet2<N>& a, double s) {
  return s * a;
}

template <int N>
Jet2<N> reciprocal(const Jet2<N>& a) {
  const double inv = 1.0 / a.value;
  return a.apply(inv, -inv * inv, 2.0 * inv * inv * inv);
}

template <int N>
Jet2<N> operator/(const Jet2<N>& a, const Jet2<N>& b) {
  return a * reciprocal(b);
}

inline double reciprocal(double a) { return 1.0 / a; }

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Jet2<N>& x) {
  return x.value;
}

}  // namespace sitecoord

#endif  // SITECOORD_JET_HPP_
