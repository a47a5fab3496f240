// SPDX-License-Identifier: Apache-2.0
#include "normalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "normalign/errors.hpp"

namespace normalign {

CheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                              double step, double tol) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw ContractError("finite_diff_check: input does not require grad");
    x.zero_grad();
  }
  backward(f());

  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  CheckReport report;
  NoGradGuard no_grad;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = f().item();
      values[i] = orig - step;
      const double down = f().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double rel = std::abs(a - numeric) / denom;
      if (flat == 0 || (!std::isnan(report.max_rel_error) && !(rel <= report.max_rel_error))) {
        report.max_rel_error = rel;
        report.worst_index = flat;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  for (auto& x : inputs) x.zero_grad();
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error <= tol;
  return report;
}

CheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double step, double tol) {
  Tensor input = x.requires_grad() ? x : Tensor::from(x.shape(), {x.values().begin(), x.values().end()}, true);
  return finite_diff_check([&] { return f(input); }, {input}, step, tol);
}

}  // namespace normalign
