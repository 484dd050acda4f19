#pragma once

// Central finite-difference gradient oracle for the tape. Test-only: it
// evaluates the forward pass repeatedly and never looks at backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dfd/tensor/tensor.hpp"

namespace dfd::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<param>[<index>] analytic=... numeric=..."
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

// Compares backward() against (f(p+h) - f(p-h)) / 2h for every entry of
// every tensor in `params`.
inline GradCheckResult gradcheck(const LossFn& loss_fn, std::vector<Tensor<double>> params, double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      Tape<double> up_tape;
      const double up = loss_fn(up_tape).item();
      values[i] = saved - h;
      Tape<double> down_tape;
      const double down = loss_fn(down_tape).item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[i], numeric);
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = "param " + std::to_string(pi) + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace dfd::testing
