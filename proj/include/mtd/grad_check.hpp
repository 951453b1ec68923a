#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtd/tensor.hpp"

namespace mtd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of `f` against central differences, one
// coordinate at a time. Error per coordinate is |a - n| / max(1e-8, |a| + |n|).
// `f` must rebuild its graph from the current parameter values on each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-5) {
  for (Tensor& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: f is not finite");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  auto evaluate = [&] {
    NoGradGuard guard;
    const double v = f().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: f is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = evaluate();
      data[i] = saved - eps;
      const double down = evaluate();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mtd
