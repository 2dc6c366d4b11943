// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/nn.hpp"

#include <cmath>

namespace manet {

int64_t param_count(const ParamRegistry& registry) {
  int64_t n = 0;
  for (const auto& p : registry.params()) n += static_cast<int64_t>(p.var.value().size());
  return n;
}

namespace init {

Var uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return Var(std::move(t), true);
}

Var normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return Var(std::move(t), true);
}

Var fan_in_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
  return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Var filled(Shape shape, double value) { return Var(Tensor(std::move(shape), value), true); }

}  // namespace init

BatchNorm::BatchNorm(int64_t features)
    : gamma(init::filled({features}, 1.0)), beta(init::filled({features}, 0.0)), state(features) {}

void BatchNorm::register_params(ParamRegistry& reg, const std::string& prefix, ParamGroup group) {
  reg.param(prefix + ".gamma", gamma, group);
  reg.param(prefix + ".beta", beta, group);
  reg.buffer(prefix + ".running_mean", &state.running_mean);
  reg.buffer(prefix + ".running_var", &state.running_var);
}

}  // namespace manet
