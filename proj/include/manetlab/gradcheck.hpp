// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "manetlab/autograd.hpp"

namespace manet {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error: |a - n| / max(|a|, |n|, floor).
  double relative_floor = 1e-6;
  // Coordinates probed per input; 0 probes every coordinate.
  int64_t max_coords_per_input = 0;
  uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  int64_t coordinates = 0;
  std::string worst_input;
};

// `loss` must rebuild its graph from the given leaves on every call and return
// a single-element Var. Leaves are perturbed in place and restored.
GradCheckResult gradcheck(const std::string& name, const std::function<Var()>& loss,
                          const std::vector<std::pair<std::string, Var>>& inputs, const GradCheckOptions& options = {});

// Fixed random projection: sum(out * weights), reducing any output to a scalar.
Var project_output(const Var& out, uint64_t seed);

}  // namespace manet
