// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of every loss and of a micro end-to-end model.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normalign/gradcheck.hpp"

namespace normalign {

struct GradientCheckRow {
  std::string name;
  CheckReport report;
};

/// Runs every check with inputs drawn from `seed`. Deterministic.
std::vector<GradientCheckRow> run_gradient_suite(std::uint64_t seed, double step = 1e-5, double tol = 1e-4);

}  // namespace normalign
