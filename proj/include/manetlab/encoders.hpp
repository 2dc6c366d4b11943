// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale backbones. The visual side is a stack of stride-2 conv+ReLU
// stages; the text side is a bidirectional GRU whose two directions are
// averaged per word. Feature maps travel as position rows: an image batch
// becomes [B*H*W, C] (row-major over H then W), a caption batch [B*L, C].

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "manetlab/autograd.hpp"
#include "manetlab/nn.hpp"

namespace manet::encoders {

struct VisualConfig {
  int64_t in_channels = 3;
  int64_t in_h = 48;
  int64_t in_w = 16;
  std::vector<int64_t> stage_channels{32, 64};
  int64_t kernel = 3;
  int64_t stride = 2;

  int64_t out_channels() const { return stage_channels.back(); }
  // [C, H, W] of the produced feature map.
  Shape output_shape() const;
};

class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(const VisualConfig& config, std::mt19937_64& rng);

  // images: [B, Cin, H, W] -> [B, C, H', W']
  Var forward(const Var& images) const;
  // images -> position rows [B*H'*W', C]
  Var forward_rows(const Var& images) const;

  const VisualConfig& config() const { return config_; }
  std::vector<Var>& weights() { return weights_; }
  std::vector<Var>& biases() { return biases_; }
  void register_params(ParamRegistry& reg);

 private:
  VisualConfig config_;
  std::vector<Var> weights_;
  std::vector<Var> biases_;
};

struct WordEmbedding {
  Var table;  // [V, d_e], row 0 is padding and stays zero

  WordEmbedding() = default;
  WordEmbedding(int64_t vocab, int64_t dim, std::mt19937_64& rng);
  // tokens -> [n, d_e] rows
  Var forward(std::span<const int64_t> tokens) const;
  void register_params(ParamRegistry& reg);
  void clear_padding_row();
};

struct GruCell {
  Var w_ih;  // [3H, in]  gates ordered r, z, n
  Var w_hh;  // [3H, H]
  Var b_ih;  // [3H]
  Var b_hh;  // [3H]

  GruCell() = default;
  GruCell(int64_t input, int64_t hidden, std::mt19937_64& rng);
  int64_t hidden() const { return w_hh.dim(1); }
};

struct TextConfig {
  int64_t embed_dim = 32;
  int64_t hidden = 64;  // C
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextConfig& config, std::mt19937_64& rng);

  // embeddings: [B*L, d_e] sample-major rows -> E rows [B*L, C]; rows at or
  // past valid_lengths[b] are exactly zero. The backward direction starts at
  // the last valid word of each caption.
  Var forward(const Var& embeddings, int64_t length, std::span<const int64_t> valid_lengths) const;

  GruCell& forward_cell() { return fwd_; }
  GruCell& backward_cell() { return bwd_; }
  const TextConfig& config() const { return config_; }
  void register_params(ParamRegistry& reg);

 private:
  TextConfig config_;
  GruCell fwd_;
  GruCell bwd_;
};

}  // namespace manet::encoders
