// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full network: encoders, optional suppression (RGL, CAF), global and
// implicit local alignment heads, identity classifiers.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "manetlab/alignment.hpp"
#include "manetlab/autograd.hpp"
#include "manetlab/encoders.hpp"
#include "manetlab/nn.hpp"
#include "manetlab/objectives.hpp"
#include "manetlab/suppression.hpp"

namespace manet::model {

struct ModelConfig {
  encoders::VisualConfig visual;
  encoders::TextConfig text;
  int64_t vocab_size = 0;
  int64_t length = 24;
  int64_t classes = 0;
  int64_t global_dim = 64;
  int64_t local_dim = 32;
  int64_t centers = 6;
  int64_t r1 = 8;
  int64_t r2 = 16;
  int64_t r3 = 4;
  int64_t se_ratio = 4;
  bool ga = true;
  bool ila = true;
  bool rgl = true;
  bool caf = true;
  alignment::Assignment assignment = alignment::Assignment::kRelation;
  alignment::CenterInit center_init = alignment::CenterInit::kNormal;
  uint64_t seed = 1;

  int64_t positions() const;
  std::string variant() const;  // "Baseline", "GA+ILA", "GA+ILA+RGL+CAF", ...
  std::string canonical() const;
  uint64_t hash() const;
};

struct Batch {
  Tensor images;                       // [B, 3, H, W]
  std::vector<int64_t> tokens;         // B*L
  std::vector<int64_t> valid_lengths;  // B
  std::vector<int64_t> labels;         // B, class index
  std::vector<int64_t> sample_ids;     // B, for diagnostics
  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

struct ImageFeatures {
  Var features;   // F rows [B*N, C]
  Var attention;  // A rows, undefined without RGL
  Var gated;      // F~
  Var restored;   // F^
  Var f_tilde;    // GAP(F~) [B, C]
  Var f_hat;      // GAP(F^) [B, C]
};

struct Output {
  ImageFeatures image;
  Var text_rows;  // E rows [B*L, C]
  Var v_global;
  Var t_global;
  Var v_local;  // undefined without ILA
  Var t_local;
};

struct LossResult {
  Var total;
  objectives::LossBreakdown parts;
};

struct Embeddings {
  Tensor global;  // [n, d_g]
  Tensor local;   // [n, K*d_c], empty without ILA
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ImageFeatures encode_image(const Tensor& images, NormMode mode);
  Var encode_text(std::span<const int64_t> tokens, std::span<const int64_t> valid_lengths) const;
  Output forward(const Batch& batch, NormMode mode,
                 alignment::CenterRoute route = alignment::CenterRoute::kBoth);
  LossResult loss(const Output& out, std::span<const int64_t> labels, std::span<const int64_t> surrogates,
                  const objectives::LossConfig& config) const;

  // Inference with frozen statistics and no graph, in chunks.
  Embeddings embed_images(const Tensor& images, int64_t chunk = 64);
  Embeddings embed_texts(std::span<const int64_t> tokens, std::span<const int64_t> valid_lengths,
                         int64_t chunk = 64);
  // Channel-averaged RGL attention per position [B, N]; ones without RGL.
  Tensor attention_map(const Tensor& images);

  const ModelConfig& config() const { return config_; }
  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }

  encoders::VisualEncoder visual;
  encoders::WordEmbedding embedding;
  encoders::TextEncoder text;
  suppression::RelationGuidedLocalization rgl;
  suppression::ChannelAttentionFiltration caf;
  alignment::ImplicitLocalAlignment ila;
  alignment::GlobalAlignment ga;
  alignment::SharedGlobalHead baseline;
  objectives::ClassifierBank classifiers;

 private:
  Var global_image(const ImageFeatures& f) const;
  Var global_text(const Var& rows, std::span<const int64_t> valid_lengths) const;

  ModelConfig config_;
  ParamRegistry registry_;
};

}  // namespace manet::model
