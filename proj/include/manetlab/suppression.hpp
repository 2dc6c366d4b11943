// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image-specific information suppression: relation-guided localization
// gates every position and channel from its relation vectors to all other
// positions; channel attention filtration instance-normalizes the gated map
// and adds back the channels of the removed residual that carry identity.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "manetlab/autograd.hpp"
#include "manetlab/nn.hpp"

namespace manet::suppression {

// r(x, y) = ReLU(BN(W (x_theta - y_phi))), x_theta = ReLU(BN(W_theta x)),
// y_phi = ReLU(BN(W_phi y)).
class RelationUnit {
 public:
  RelationUnit() = default;
  RelationUnit(int64_t in_dim, int64_t mid_dim, int64_t out_dim, std::mt19937_64& rng);

  Var embed_x(const Var& x, NormMode mode);
  Var embed_y(const Var& y, NormMode mode);
  // Relations for index pairs over already-embedded rows -> [P, out_dim].
  Var relate(const Var& x_theta, const Var& y_phi, std::span<const int64_t> ix, std::span<const int64_t> iy,
             NormMode mode);

  int64_t in_dim() const { return w_theta.dim(1); }
  int64_t mid_dim() const { return w_theta.dim(0); }
  int64_t out_dim() const { return w.dim(0); }
  void register_params(ParamRegistry& reg, const std::string& prefix);

  Var w_theta;  // [mid, in]
  Var w_phi;    // [mid, in]
  Var w;        // [out, mid]
  BatchNorm bn_theta;
  BatchNorm bn_phi;
  BatchNorm bn_out;
};

// Single relation vector between x and y, both [D_in] -> [D_out].
Var relation_vector(const Var& x, const Var& y, RelationUnit& unit, NormMode mode);

struct RglConfig {
  int64_t channels = 64;
  int64_t positions = 48;  // N = H*W
  int64_t r1 = 8;
  int64_t r2 = 16;
};

struct RglOutput {
  Var attention;  // A as rows [B*N, C], entries in (0,1)
  Var gated;      // F~ = A * F
};

class RelationGuidedLocalization {
 public:
  RelationGuidedLocalization() = default;
  RelationGuidedLocalization(const RglConfig& config, std::mt19937_64& rng);

  // features: F as rows [B*N, C]. r_i concatenates r_{i,j} for j = 1..N in
  // row-major position order, self-pair included.
  RglOutput forward(const Var& features, NormMode mode);
  // Global relation vectors r_i -> [B*N, N*C/r2].
  Var relations(const Var& features, NormMode mode);

  const RglConfig& config() const { return config_; }
  int64_t relation_width() const { return config_.positions * unit.out_dim(); }
  void register_params(ParamRegistry& reg);

  RelationUnit unit;
  Var w_a;  // [C, C + N*C/r2]
  BatchNorm bn_a;

 private:
  RglConfig config_;
};

Var apply_attention(const Var& features, const Var& attention);

struct CafConfig {
  int64_t channels = 64;
  int64_t positions = 48;
  int64_t se_ratio = 4;
  double eps = 1e-5;
};

struct CafOutput {
  Var normalized;  // F~_IN
  Var removed;     // R = F~ - F~_IN
  Var gate;        // w_C, [B, C]
  Var restored;    // F^ = F~_IN + w_C * R
};

class ChannelAttentionFiltration {
 public:
  ChannelAttentionFiltration() = default;
  ChannelAttentionFiltration(const CafConfig& config, std::mt19937_64& rng);

  // gated: F~ rows [B*N, C]. `forced_gate` replaces the squeeze-excite output
  // with a constant, for probing the restitution algebra.
  CafOutput forward(const Var& gated, std::optional<double> forced_gate = std::nullopt) const;
  Var instance_norm(const Var& gated) const;

  const CafConfig& config() const { return config_; }
  void register_params(ParamRegistry& reg);

  Var gamma;    // [C], starts at ones
  Var beta;     // [C], starts at zeros
  Var squeeze;  // [C/se, C]
  Var excite;   // [C, C/se]

 private:
  CafConfig config_;
};

}  // namespace manet::suppression
