// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/suppression.hpp"

#include <stdexcept>
#include <vector>

namespace manet::suppression {

RelationUnit::RelationUnit(int64_t in_dim, int64_t mid_dim, int64_t out_dim, std::mt19937_64& rng)
    : w_theta(init::fan_in_uniform({mid_dim, in_dim}, in_dim, rng)),
      w_phi(init::fan_in_uniform({mid_dim, in_dim}, in_dim, rng)),
      w(init::fan_in_uniform({out_dim, mid_dim}, mid_dim, rng)),
      bn_theta(mid_dim),
      bn_phi(mid_dim),
      bn_out(out_dim) {
  if (in_dim <= 0 || mid_dim <= 0 || out_dim <= 0) throw std::invalid_argument("relation unit dims must be positive");
}

Var RelationUnit::embed_x(const Var& x, NormMode mode) {
  return ag::relu(bn_theta.forward(ag::linear(x, w_theta), mode));
}

Var RelationUnit::embed_y(const Var& y, NormMode mode) { return ag::relu(bn_phi.forward(ag::linear(y, w_phi), mode)); }

Var RelationUnit::relate(const Var& x_theta, const Var& y_phi, std::span<const int64_t> ix,
                         std::span<const int64_t> iy, NormMode mode) {
  Var diff = ag::pair_difference(x_theta, y_phi, ix, iy);
  return ag::relu(bn_out.forward(ag::linear(diff, w), mode));
}

void RelationUnit::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.param(prefix + ".w_theta", w_theta, ParamGroup::kRest);
  reg.param(prefix + ".w_phi", w_phi, ParamGroup::kRest);
  reg.param(prefix + ".w", w, ParamGroup::kRest);
  bn_theta.register_params(reg, prefix + ".bn_theta", ParamGroup::kRest);
  bn_phi.register_params(reg, prefix + ".bn_phi", ParamGroup::kRest);
  bn_out.register_params(reg, prefix + ".bn_out", ParamGroup::kRest);
}

Var relation_vector(const Var& x, const Var& y, RelationUnit& unit, NormMode mode) {
  const auto d = static_cast<int64_t>(x.value().size());
  if (static_cast<int64_t>(y.value().size()) != d || d != unit.in_dim())
    throw std::invalid_argument("relation_vector: input width mismatch");
  Var xr = ag::reshape(x, {1, d});
  Var yr = ag::reshape(y, {1, d});
  const int64_t zero = 0;
  Var r = unit.relate(unit.embed_x(xr, mode), unit.embed_y(yr, mode), {&zero, 1}, {&zero, 1}, mode);
  return ag::reshape(r, {unit.out_dim()});
}

RelationGuidedLocalization::RelationGuidedLocalization(const RglConfig& config, std::mt19937_64& rng)
    : config_(config) {
  if (config.channels % config.r1 != 0 || config.channels % config.r2 != 0)
    throw std::invalid_argument("RGL reduction ratios must divide the channel count");
  unit = RelationUnit(config.channels, config.channels / config.r1, config.channels / config.r2, rng);
  const int64_t width = config.channels + config.positions * (config.channels / config.r2);
  w_a = init::fan_in_uniform({config.channels, width}, width, rng);
  bn_a = BatchNorm(config.channels);
}

Var RelationGuidedLocalization::relations(const Var& features, NormMode mode) {
  const int64_t n = config_.positions;
  if (features.value().rank() != 2 || features.dim(1) != config_.channels || features.dim(0) % n != 0)
    throw std::invalid_argument("RGL input must be [B*N, C] rows, got " + shape_str(features.shape()));
  const int64_t batch = features.dim(0) / n;
  std::vector<int64_t> ix(static_cast<size_t>(batch * n * n)), iy(ix.size());
  size_t p = 0;
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j, ++p) {
        ix[p] = b * n + i;
        iy[p] = b * n + j;
      }
  Var theta = unit.embed_x(features, mode);
  Var phi = unit.embed_y(features, mode);
  Var rel = unit.relate(theta, phi, ix, iy, mode);  // [B*N*N, D_out], pairs (b,i,j) in order
  return ag::reshape(rel, {batch * n, n * unit.out_dim()});
}

RglOutput RelationGuidedLocalization::forward(const Var& features, NormMode mode) {
  Var rel = relations(features, mode);
  const Var parts[] = {features, rel};
  Var joint = ag::concat_cols(parts);
  Var attention = ag::sigmoid(bn_a.forward(ag::linear(joint, w_a), mode));
  return {attention, apply_attention(features, attention)};
}

void RelationGuidedLocalization::register_params(ParamRegistry& reg) {
  unit.register_params(reg, "rgl.relation");
  reg.param("rgl.w_a", w_a, ParamGroup::kRest);
  bn_a.register_params(reg, "rgl.bn_a", ParamGroup::kRest);
}

Var apply_attention(const Var& features, const Var& attention) { return ag::mul(attention, features); }

ChannelAttentionFiltration::ChannelAttentionFiltration(const CafConfig& config, std::mt19937_64& rng)
    : gamma(init::filled({config.channels}, 1.0)), beta(init::filled({config.channels}, 0.0)), config_(config) {
  if (config.se_ratio <= 0 || config.channels % config.se_ratio != 0)
    throw std::invalid_argument("squeeze-excite ratio must divide the channel count");
  const int64_t mid = config.channels / config.se_ratio;
  squeeze = init::fan_in_uniform({mid, config.channels}, config.channels, rng);
  excite = init::fan_in_uniform({config.channels, mid}, mid, rng);
}

Var ChannelAttentionFiltration::instance_norm(const Var& gated) const {
  return ag::instance_norm(gated, config_.positions, gamma, beta, config_.eps);
}

CafOutput ChannelAttentionFiltration::forward(const Var& gated, std::optional<double> forced_gate) const {
  const int64_t n = config_.positions;
  if (gated.value().rank() != 2 || gated.dim(1) != config_.channels || gated.dim(0) % n != 0)
    throw std::invalid_argument("CAF input must be [B*N, C] rows, got " + shape_str(gated.shape()));
  const int64_t batch = gated.dim(0) / n;
  const Offsets segs = uniform_offsets(batch, n);

  CafOutput out;
  out.normalized = instance_norm(gated);
  out.removed = ag::sub(gated, out.normalized);
  if (forced_gate) {
    out.gate = ag::constant(Tensor(Shape{batch, config_.channels}, *forced_gate));
  } else {
    Var pooled = ag::segment_mean(out.removed, segs);
    out.gate = ag::sigmoid(ag::linear(ag::relu(ag::linear(pooled, squeeze)), excite));
  }
  // IN + w * R written as w * F~ + (1 - w) * IN so that gates of 0 and 1
  // reproduce their endpoints exactly.
  Var w = ag::expand_segments(out.gate, segs);
  out.restored = ag::add(ag::mul(w, gated), ag::mul(ag::one_minus(w), out.normalized));
  return out;
}

void ChannelAttentionFiltration::register_params(ParamRegistry& reg) {
  reg.param("caf.gamma", gamma, ParamGroup::kRest);
  reg.param("caf.beta", beta, ParamGroup::kRest);
  reg.param("caf.squeeze", squeeze, ParamGroup::kRest);
  reg.param("caf.excite", excite, ParamGroup::kRest);
}

}  // namespace manet::suppression
