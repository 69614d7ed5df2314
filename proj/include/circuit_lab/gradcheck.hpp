// Copyright 2026 The Circuit Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "circuit_lab/tensor.hpp"

namespace circuit_lab {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  Index worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
};

// Relative error of an analytic derivative against a numeric one. Magnitudes
// below `floor` are compared on the floor's scale so that derivatives which
// are zero up to rounding do not divide by ~0.
inline double relative_error(double analytic, double numeric, double floor) {
  const double scale =
      std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Compares reverse-mode gradients of `loss_fn` with central differences
// (f(θ+ε) - f(θ-ε)) / 2ε, element by element over every tensor in `params`.
// `loss_fn` must be deterministic and return a scalar tensor; it is called
// once under a tape for the analytic pass and twice per element without one.
// Existing gradients on `params` are cleared.
// Fourth-order central differences:
// (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h.
template <typename Scalar, typename LossFn>
Matrix<double> numeric_gradient(LossFn&& loss_fn, Tensor<Scalar>& param,
                                double epsilon) {
  Matrix<double> out(param.rows(), param.cols());
  Scalar* data = param.data();
  auto at = [&](Index i, Scalar saved, double offset) {
    data[i] = static_cast<Scalar>(saved + offset);
    return static_cast<double>(loss_fn().item());
  };
  for (Index i = 0; i < param.size(); ++i) {
    const Scalar saved = data[i];
    const double m2 = at(i, saved, -2.0 * epsilon);
    const double m1 = at(i, saved, -epsilon);
    const double p1 = at(i, saved, epsilon);
    const double p2 = at(i, saved, 2.0 * epsilon);
    data[i] = saved;
    out.data()[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * epsilon);
  }
  return out;
}

// Analytic gradient of loss_fn() with respect to each tensor.
template <typename Scalar, typename LossFn>
std::vector<Matrix<double>> analytic_gradients(LossFn&& loss_fn,
                                               std::span<Tensor<Scalar>> params) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<Scalar> tape;
    typename Tape<Scalar>::Scope scope(tape);
    Tensor<Scalar> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<Matrix<double>> out;
  for (auto& p : params) {
    out.push_back(p.has_grad() ? p.grad().template cast<double>().eval()
                               : Matrix<double>::Zero(p.rows(), p.cols()));
  }
  return out;
}

// Largest relative error over all elements of paired gradient lists.
inline GradCheckResult compare_gradients(std::span<const Matrix<double>> analytic,
                                         std::span<const Matrix<double>> numeric,
                                         double floor = 1e-6) {
  GradCheckResult result;
  for (std::size_t t = 0; t < analytic.size(); ++t) {
    for (Index i = 0; i < analytic[t].size(); ++i) {
      const double a = analytic[t].data()[i];
      const double n = numeric[t].data()[i];
      const double err = relative_error(a, n, floor);
      ++result.elements_checked;
      if (err > result.max_relative_error || result.elements_checked == 1) {
        result.max_relative_error = err;
        result.worst_tensor = t;
        result.worst_element = i;
        result.analytic = a;
        result.numeric = n;
      }
    }
  }
  return result;
}

template <typename Scalar, typename LossFn>
GradCheckResult check_gradients(LossFn&& loss_fn,
                                std::span<Tensor<Scalar>> params,
                                double epsilon, double floor = 1e-6) {
  const auto analytic = analytic_gradients<Scalar>(loss_fn, params);
  std::vector<Matrix<double>> numeric;
  for (auto& p : params) numeric.push_back(numeric_gradient<Scalar>(loss_fn, p, epsilon));
  return compare_gradients(analytic, numeric, floor);
}

}  // namespace circuit_lab
