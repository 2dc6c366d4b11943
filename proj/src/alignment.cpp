// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/alignment.hpp"

#include <cmath>
#include <utility>
#include <stdexcept>

namespace manet::alignment {

Assignment parse_assignment(const std::string& s) {
  if (s == "relation") return Assignment::kRelation;
  if (s == "inner_product") return Assignment::kInnerProduct;
  throw std::invalid_argument("unknown assignment '" + s + "' (relation | inner_product)");
}

std::string to_string(Assignment a) { return a == Assignment::kRelation ? "relation" : "inner_product"; }

namespace {

const std::vector<std::pair<std::string, CenterInit>>& init_names() {
  static const std::vector<std::pair<std::string, CenterInit>> names = {
      {"normal", CenterInit::kNormal},       {"uniform", CenterInit::kUniform},
      {"kaiming_normal", CenterInit::kKaimingNormal}, {"xavier_normal", CenterInit::kXavierNormal},
      {"zeros", CenterInit::kZeros},         {"ones", CenterInit::kOnes},
      {"identity", CenterInit::kIdentity},   {"constant", CenterInit::kConstant},
      {"orthogonal", CenterInit::kOrthogonal},
  };
  return names;
}

}  // namespace

CenterInit parse_center_init(const std::string& s) {
  for (const auto& [n, v] : init_names())
    if (n == s) return v;
  throw std::invalid_argument("unknown center_init '" + s + "'");
}

std::string to_string(CenterInit c) {
  for (const auto& [n, v] : init_names())
    if (v == c) return n;
  return "normal";
}

Tensor make_centers(int64_t k, int64_t dim, CenterInit scheme, std::mt19937_64& rng) {
  Tensor t(Shape{k, dim});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  switch (scheme) {
    case CenterInit::kNormal:
      for (double& v : t.values()) v = std_normal(rng);
      break;
    case CenterInit::kUniform: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (double& v : t.values()) v = u(rng);
      break;
    }
    case CenterInit::kKaimingNormal: {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(dim)));
      for (double& v : t.values()) v = n(rng);
      break;
    }
    case CenterInit::kXavierNormal: {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(dim + k)));
      for (double& v : t.values()) v = n(rng);
      break;
    }
    case CenterInit::kZeros:
      t.fill(1e-8);
      break;
    case CenterInit::kOnes:
      t.fill(1.0);
      break;
    case CenterInit::kIdentity:
      for (int64_t i = 0; i < std::min(k, dim); ++i) t.at(i, i) = 1.0;
      break;
    case CenterInit::kConstant:
      t.fill(0.3);
      break;
    case CenterInit::kOrthogonal: {
      // Gram-Schmidt on Gaussian rows; rows beyond dim cannot be orthogonal
      // and stay Gaussian.
      for (double& v : t.values()) v = std_normal(rng);
      for (int64_t i = 0; i < std::min(k, dim); ++i) {
        for (int64_t j = 0; j < i; ++j) {
          double dot = 0.0;
          for (int64_t c = 0; c < dim; ++c) dot += t.at(i, c) * t.at(j, c);
          for (int64_t c = 0; c < dim; ++c) t.at(i, c) -= dot * t.at(j, c);
        }
        double n = 0.0;
        for (int64_t c = 0; c < dim; ++c) n += t.at(i, c) * t.at(i, c);
        n = std::sqrt(n);
        for (int64_t c = 0; c < dim; ++c) t.at(i, c) /= n;
      }
      break;
    }
  }
  return t;
}

ValidRows valid_rows(int64_t length, std::span<const int64_t> valid_lengths) {
  ValidRows out;
  out.offsets.push_back(0);
  for (size_t b = 0; b < valid_lengths.size(); ++b) {
    const int64_t v = valid_lengths[b];
    if (v < 0 || v > length) throw std::invalid_argument("valid_length outside [0, L]");
    for (int64_t t = 0; t < v; ++t) out.rows.push_back(static_cast<int64_t>(b) * length + t);
    out.offsets.push_back(static_cast<int64_t>(out.rows.size()));
  }
  return out;
}

ImplicitLocalAlignment::ImplicitLocalAlignment(const IlaConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.centers <= 0) throw std::invalid_argument("number of topic centers must be positive");
  if (config.dim % config.r3 != 0) throw std::invalid_argument("r3 must divide d_c");
  centers = Var(make_centers(config.centers, config.dim, config.center_init, rng), true);
  w_s = init::fan_in_uniform({config.dim, config.channels}, config.channels, rng);
  // Inputs have unit norm, so the fan-in bound would leave Z entries near 1/sqrt(3C);
  // rescaled to a standard deviation of 1/3.
  for (double& v : w_s.mutable_value().values()) v *= std::sqrt(static_cast<double>(config.channels) / 3.0);
  unit = suppression::RelationUnit(config.dim, config.dim / config.r3, config.dim, rng);
  text_theta = unit.bn_theta.state;
  text_out = unit.bn_out.state;
}

Var ImplicitLocalAlignment::project_shared(const Var& rows) const {
  return ag::linear(ag::l2_normalize_rows(rows), w_s);
}

Var ImplicitLocalAlignment::assign(const Var& z, NormMode mode) { return assign_to(z, centers, mode); }

Var ImplicitLocalAlignment::assign_to(const Var& z, const Var& bank, NormMode mode) {
  const int64_t k = config_.centers, d = config_.dim;
  const int64_t rows = z.dim(0);
  if (bank.dim(0) != k || bank.dim(1) != d) throw std::invalid_argument("center bank must be [K, d_c]");
  if (config_.assignment == Assignment::kInnerProduct) return ag::repeat_cols(ag::linear(z, bank), d);
  std::vector<int64_t> ix(static_cast<size_t>(rows * k)), iy(ix.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < k; ++j) {
      ix[static_cast<size_t>(r * k + j)] = r;
      iy[static_cast<size_t>(r * k + j)] = j;
    }
  Var a = unit.relate(unit.embed_x(z, mode), unit.embed_y(bank, mode), ix, iy, mode);  // [R*K, d_c]
  return ag::reshape(a, {rows, k * d});
}

Var ImplicitLocalAlignment::aggregate(const Var& z, const Var& assignments, const Offsets& offsets) const {
  std::vector<Var> tiles(static_cast<size_t>(config_.centers), z);
  Var tiled = ag::concat_cols(tiles);  // [R, K*d_c]
  return ag::segment_sum(ag::mul(assignments, tiled), offsets);
}

namespace {

// Swaps the text statistics into the shared unit for the lifetime of a call.
class StatisticsSwap {
 public:
  StatisticsSwap(BatchNormState& a, BatchNormState& b, BatchNormState& c, BatchNormState& d, bool active)
      : a_(a), b_(b), c_(c), d_(d), active_(active) {
    swap();
  }
  ~StatisticsSwap() { swap(); }
  StatisticsSwap(const StatisticsSwap&) = delete;
  StatisticsSwap& operator=(const StatisticsSwap&) = delete;

 private:
  void swap() {
    if (!active_) return;
    std::swap(a_, b_);
    std::swap(c_, d_);
  }
  BatchNormState &a_, &b_, &c_, &d_;
  bool active_;
};

}  // namespace

Var ImplicitLocalAlignment::forward_with(const Var& rows, const Offsets& offsets, const Var& bank, NormMode mode,
                                         Modality modality) {
  StatisticsSwap guard(unit.bn_theta.state, text_theta, unit.bn_out.state, text_out, modality == Modality::kText);
  Var z = project_shared(rows);
  return aggregate(z, assign_to(z, bank, mode), offsets);
}

Var ImplicitLocalAlignment::forward(const Var& rows, const Offsets& offsets, NormMode mode, Modality modality) {
  return forward_with(rows, offsets, centers, mode, modality);
}

IlaPair ImplicitLocalAlignment::forward_pair(const Var& image_rows, const Offsets& image_offsets,
                                             const Var& text_rows, const Offsets& text_offsets, NormMode mode,
                                             CenterRoute route) {
  const Var detached = ag::constant(centers.value());
  const Var& image_bank = route == CenterRoute::kTextOnly ? detached : centers;
  const Var& text_bank = route == CenterRoute::kImageOnly ? detached : centers;
  return {forward_with(image_rows, image_offsets, image_bank, mode, Modality::kImage),
          forward_with(text_rows, text_offsets, text_bank, mode, Modality::kText)};
}

Var ImplicitLocalAlignment::assign_one(const Var& z, int64_t center, NormMode mode) {
  if (center < 0 || center >= config_.centers) throw std::out_of_range("center index out of range");
  const int64_t d = config_.dim;
  Var zr = ag::reshape(z, {1, d});
  if (config_.assignment == Assignment::kInnerProduct) {
    Var dot = ag::slice_cols(ag::linear(zr, centers), center, 1);
    return ag::reshape(ag::repeat_cols(dot, d), {d});
  }
  const int64_t zero = 0;
  Var a = unit.relate(unit.embed_x(zr, mode), unit.embed_y(centers, mode), {&zero, 1}, {&center, 1}, mode);
  return ag::reshape(a, {d});
}

void ImplicitLocalAlignment::register_params(ParamRegistry& reg) {
  reg.param("ila.centers", centers, ParamGroup::kRest);
  reg.param("ila.w_s", w_s, ParamGroup::kRest);
  unit.register_params(reg, "ila.relation");
  reg.buffer("ila.relation.text.bn_theta.running_mean", &text_theta.running_mean);
  reg.buffer("ila.relation.text.bn_theta.running_var", &text_theta.running_var);
  reg.buffer("ila.relation.text.bn_out.running_mean", &text_out.running_mean);
  reg.buffer("ila.relation.text.bn_out.running_var", &text_out.running_var);
}

GlobalAlignment::GlobalAlignment(const GlobalConfig& config, std::mt19937_64& rng)
    : w_image(init::fan_in_uniform({config.dim, config.channels}, config.channels, rng)),
      w_text(init::fan_in_uniform({config.dim, config.channels}, config.channels, rng)) {}

Var GlobalAlignment::image(const Var& rows, const Offsets& offsets) const {
  return ag::segment_max(ag::linear(rows, w_image), offsets);
}

Var GlobalAlignment::text(const Var& rows, int64_t length, std::span<const int64_t> valid_lengths) const {
  for (int64_t v : valid_lengths)
    if (v <= 0) throw std::invalid_argument("global_text: caption with valid_length 0");
  const ValidRows vr = valid_rows(length, valid_lengths);
  return ag::linear(ag::segment_max(ag::gather_rows(rows, vr.rows), vr.offsets), w_text);
}

void GlobalAlignment::register_params(ParamRegistry& reg) {
  reg.param("ga.w_image", w_image, ParamGroup::kRest);
  reg.param("ga.w_text", w_text, ParamGroup::kRest);
}

SharedGlobalHead::SharedGlobalHead(const GlobalConfig& config, std::mt19937_64& rng)
    : w(init::fan_in_uniform({config.dim, config.channels}, config.channels, rng)) {}

Var SharedGlobalHead::image(const Var& rows, const Offsets& offsets) const {
  return ag::linear(ag::segment_max(rows, offsets), w);
}

Var SharedGlobalHead::text(const Var& rows, int64_t length, std::span<const int64_t> valid_lengths) const {
  for (int64_t v : valid_lengths)
    if (v <= 0) throw std::invalid_argument("global text head: caption with valid_length 0");
  const ValidRows vr = valid_rows(length, valid_lengths);
  return ag::linear(ag::segment_max(ag::gather_rows(rows, vr.rows), vr.offsets), w);
}

void SharedGlobalHead::register_params(ParamRegistry& reg) { reg.param("baseline.w_shared", w, ParamGroup::kRest); }

}  // namespace manet::alignment
