// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "manetlab/autograd.hpp"
#include "manetlab/gradcheck.hpp"
#include "manetlab/tensor.hpp"

namespace testutil {

inline manet::Tensor random_tensor(manet::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  manet::Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline manet::Var leaf(manet::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return manet::Var(random_tensor(std::move(shape), rng, scale), true);
}

inline manet::GradCheckOptions fast_check(int64_t coords = 0) {
  manet::GradCheckOptions o;
  o.max_coords_per_input = coords;
  return o;
}

}  // namespace testutil
