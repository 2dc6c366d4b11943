// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "manetlab/autograd.hpp"

namespace manet {

// Learning-rate group: the visual backbone trains with its own rate.
enum class ParamGroup { kBackbone, kRest };

struct ParamRef {
  std::string name;
  Var var;
  ParamGroup group;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

class ParamRegistry {
 public:
  void param(std::string name, const Var& v, ParamGroup group) { params_.push_back({std::move(name), v, group}); }
  void buffer(std::string name, Tensor* t) { buffers_.push_back({std::move(name), t}); }

  const std::vector<ParamRef>& params() const { return params_; }
  const std::vector<BufferRef>& buffers() const { return buffers_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<BufferRef> buffers_;
};

int64_t param_count(const ParamRegistry& registry);

namespace init {

Var uniform(Shape shape, double bound, std::mt19937_64& rng);
Var normal(Shape shape, double stddev, std::mt19937_64& rng);
// Kaiming-uniform style bound 1/sqrt(fan_in), the usual linear-layer default.
Var fan_in_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng);
Var filled(Shape shape, double value);

}  // namespace init

// Batch norm over feature columns of a [rows, features] input.
struct BatchNorm {
  Var gamma;
  Var beta;
  BatchNormState state;

  BatchNorm() = default;
  explicit BatchNorm(int64_t features);
  Var forward(const Var& x, NormMode mode) { return ag::batch_norm(x, gamma, beta, state, mode); }
  void register_params(ParamRegistry& reg, const std::string& prefix, ParamGroup group);
};

}  // namespace manet
