// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace manet {

GradCheckResult gradcheck(const std::string& name, const std::function<Var()>& loss,
                          const std::vector<std::pair<std::string, Var>>& inputs, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = name;

  std::vector<Var> leaves;
  for (const auto& [label, v] : inputs) {
    if (!v.requires_grad()) throw std::invalid_argument("gradcheck input '" + label + "' does not require grad");
    leaves.push_back(v);
  }
  for (Var& v : leaves) v.zero_grad();
  Var out = loss();
  out.backward();
  std::vector<Tensor> analytic;
  for (const Var& v : leaves) analytic.push_back(v.grad());

  std::mt19937_64 rng(options.seed);
  for (size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    const auto n = static_cast<int64_t>(leaf.value().size());
    std::vector<int64_t> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 && n > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(options.max_coords_per_input));
      std::sort(coords.begin(), coords.end());
    }
    for (int64_t c : coords) {
      double& slot = leaf.mutable_value()[static_cast<size_t>(c)];
      const double saved = slot;
      slot = saved + options.step;
      double plus, minus;
      {
        NoGradGuard ng;
        plus = loss().item();
        slot = saved - options.step;
        minus = loss().item();
      }
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[li][static_cast<size_t>(c)];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.relative_floor});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_input = inputs[li].first + "[" + std::to_string(c) + "]";
      }
      ++result.coordinates;
    }
  }
  return result;
}

Var project_output(const Var& out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor w(out.shape());
  for (double& v : w.values()) v = u(rng);
  return ag::sum(ag::mul(out, ag::constant(std::move(w))));
}

}  // namespace manet
