// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/encoders.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace manet::encoders {

Shape VisualConfig::output_shape() const {
  int64_t h = in_h, w = in_w;
  const int64_t pad = kernel / 2;
  for (size_t s = 0; s < stage_channels.size(); ++s) {
    h = (h + 2 * pad - kernel) / stride + 1;
    w = (w + 2 * pad - kernel) / stride + 1;
  }
  return {out_channels(), h, w};
}

VisualEncoder::VisualEncoder(const VisualConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.stage_channels.empty()) throw std::invalid_argument("visual encoder needs at least one stage");
  int64_t cin = config.in_channels;
  for (int64_t cout : config.stage_channels) {
    const int64_t fan_in = cin * config.kernel * config.kernel;
    // He-normal for ReLU stacks.
    weights_.push_back(init::normal({cout, cin, config.kernel, config.kernel},
                                    std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
    biases_.push_back(init::filled({cout}, 0.0));
    cin = cout;
  }
}

Var VisualEncoder::forward(const Var& images) const {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != config_.in_channels || s[2] != config_.in_h || s[3] != config_.in_w) {
    throw std::invalid_argument("image batch shape " + shape_str(s) + " does not match encoder input [B," +
                                std::to_string(config_.in_channels) + "," + std::to_string(config_.in_h) + "," +
                                std::to_string(config_.in_w) + "]");
  }
  Var x = images;
  for (size_t i = 0; i < weights_.size(); ++i)
    x = ag::relu(ag::conv2d(x, weights_[i], biases_[i], config_.stride, config_.kernel / 2));
  return x;
}

Var VisualEncoder::forward_rows(const Var& images) const { return ag::nchw_to_rows(forward(images)); }

void VisualEncoder::register_params(ParamRegistry& reg) {
  for (size_t i = 0; i < weights_.size(); ++i) {
    reg.param("visual.conv" + std::to_string(i) + ".weight", weights_[i], ParamGroup::kBackbone);
    reg.param("visual.conv" + std::to_string(i) + ".bias", biases_[i], ParamGroup::kBackbone);
  }
}

WordEmbedding::WordEmbedding(int64_t vocab, int64_t dim, std::mt19937_64& rng)
    : table(init::normal({vocab, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng)) {
  clear_padding_row();
}

void WordEmbedding::clear_padding_row() {
  Tensor& t = table.mutable_value();
  for (int64_t c = 0; c < t.dim(1); ++c) t.at(0, c) = 0.0;
}

Var WordEmbedding::forward(std::span<const int64_t> tokens) const { return ag::embedding(table, tokens, 0); }

void WordEmbedding::register_params(ParamRegistry& reg) { reg.param("text.embedding", table, ParamGroup::kRest); }

GruCell::GruCell(int64_t input, int64_t hidden, std::mt19937_64& rng)
    : w_ih(init::fan_in_uniform({3 * hidden, input}, hidden, rng)),
      w_hh(init::fan_in_uniform({3 * hidden, hidden}, hidden, rng)),
      b_ih(init::fan_in_uniform({3 * hidden}, hidden, rng)),
      b_hh(init::fan_in_uniform({3 * hidden}, hidden, rng)) {}

TextEncoder::TextEncoder(const TextConfig& config, std::mt19937_64& rng)
    : config_(config), fwd_(config.embed_dim, config.hidden, rng), bwd_(config.embed_dim, config.hidden, rng) {}

namespace {

// One GRU step for a batch. `xproj` already holds W_ih x + b_ih.
Var gru_step(const GruCell& cell, const Var& xproj, const Var& h) {
  const int64_t hd = cell.hidden();
  Var hproj = ag::add_row(ag::linear(h, cell.w_hh), cell.b_hh);
  Var r = ag::sigmoid(ag::add(ag::slice_cols(xproj, 0, hd), ag::slice_cols(hproj, 0, hd)));
  Var z = ag::sigmoid(ag::add(ag::slice_cols(xproj, hd, hd), ag::slice_cols(hproj, hd, hd)));
  Var n = ag::tanh(ag::add(ag::slice_cols(xproj, 2 * hd, hd), ag::mul(r, ag::slice_cols(hproj, 2 * hd, hd))));
  return ag::add(ag::mul(ag::one_minus(z), n), ag::mul(z, h));
}

}  // namespace

Var TextEncoder::forward(const Var& embeddings, int64_t length, std::span<const int64_t> valid_lengths) const {
  const auto batch = static_cast<int64_t>(valid_lengths.size());
  if (embeddings.value().rank() != 2 || embeddings.dim(0) != batch * length || embeddings.dim(1) != config_.embed_dim)
    throw std::invalid_argument("text encoder input shape " + shape_str(embeddings.shape()));
  for (int64_t v : valid_lengths)
    if (v < 0 || v > length) throw std::invalid_argument("valid_length " + std::to_string(v) + " outside [0, L]");
  const int64_t hd = config_.hidden;

  Var xf = ag::add_row(ag::linear(embeddings, fwd_.w_ih), fwd_.b_ih);
  Var xb = ag::add_row(ag::linear(embeddings, bwd_.w_ih), bwd_.b_ih);

  std::vector<Var> hf(static_cast<size_t>(length)), hb(static_cast<size_t>(length));
  std::vector<Tensor> masks;
  for (int64_t t = 0; t < length; ++t) {
    Tensor m(Shape{batch, hd});
    for (int64_t b = 0; b < batch; ++b)
      if (t < valid_lengths[static_cast<size_t>(b)])
        for (int64_t c = 0; c < hd; ++c) m.at(b, c) = 1.0;
    masks.push_back(std::move(m));
  }
  auto rows_at = [&](int64_t t) {
    std::vector<int64_t> idx(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) idx[static_cast<size_t>(b)] = b * length + t;
    return idx;
  };

  Var h = ag::constant(Tensor(Shape{batch, hd}));
  for (int64_t t = 0; t < length; ++t) {
    const auto idx = rows_at(t);
    h = gru_step(fwd_, ag::gather_rows(xf, idx), h);
    hf[static_cast<size_t>(t)] = h;
  }
  h = ag::constant(Tensor(Shape{batch, hd}));
  for (int64_t t = length - 1; t >= 0; --t) {
    const auto idx = rows_at(t);
    Var cand = gru_step(bwd_, ag::gather_rows(xb, idx), h);
    // Padding positions hold the state at zero until the caption begins.
    h = ag::mul(cand, ag::constant(masks[static_cast<size_t>(t)]));
    hb[static_cast<size_t>(t)] = h;
  }

  std::vector<Var> steps;
  steps.reserve(static_cast<size_t>(length));
  for (int64_t t = 0; t < length; ++t) {
    Var avg = ag::scale(ag::add(hf[static_cast<size_t>(t)], hb[static_cast<size_t>(t)]), 0.5);
    steps.push_back(ag::mul(avg, ag::constant(masks[static_cast<size_t>(t)])));
  }
  // Time-major [L*B, C] -> sample-major [B*L, C].
  Var time_major = ag::concat_rows(steps);
  std::vector<int64_t> perm(static_cast<size_t>(batch * length));
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t t = 0; t < length; ++t) perm[static_cast<size_t>(b * length + t)] = t * batch + b;
  return ag::gather_rows(time_major, perm);
}

void TextEncoder::register_params(ParamRegistry& reg) {
  auto add = [&](const std::string& p, const GruCell& c) {
    reg.param(p + ".w_ih", c.w_ih, ParamGroup::kRest);
    reg.param(p + ".w_hh", c.w_hh, ParamGroup::kRest);
    reg.param(p + ".b_ih", c.b_ih, ParamGroup::kRest);
    reg.param(p + ".b_hh", c.b_hh, ParamGroup::kRest);
  };
  add("text.gru_fwd", fwd_);
  add("text.gru_bwd", bwd_);
}

}  // namespace manet::encoders
