// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "normalign/tensor.hpp"

namespace normalign {

struct CheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = false;
};

/// Compares the analytic gradient of a scalar function against central
/// differences, one coordinate at a time. The relative error per coordinate is
/// |a - n| / max(1, |a|, |n|), so near-zero gradients are judged absolutely.
CheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double step = 1e-5, double tol = 1e-4);

/// Same check over several inputs at once (e.g. every parameter of a model).
/// The tensors in `inputs` are perturbed in place and restored.
CheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                              double step = 1e-5, double tol = 1e-4);

}  // namespace normalign
