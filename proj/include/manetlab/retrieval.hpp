// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Similarity fusion of global and local cosines and Rank-K evaluation.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "manetlab/datagen.hpp"
#include "manetlab/model.hpp"
#include "manetlab/tensor.hpp"

namespace manet::retrieval {

// Row-wise cosine between every query and gallery row; a zero-norm row
// scores 0 against everything.
Tensor cosine_scores(const Tensor& queries, const Tensor& gallery, int64_t* zero_rows = nullptr);

struct SimilarityMatrix {
  Tensor global;
  Tensor local;  // empty when no local embeddings
  Tensor fused;  // global + local
};

SimilarityMatrix fuse_similarity(const model::Embeddings& queries, const model::Embeddings& gallery);

// Fraction of queries with a matching label among the top-k gallery items
// (descending score, ties by ascending gallery index).
double rank_at_k(const Tensor& scores, std::span<const int64_t> query_labels,
                 std::span<const int64_t> gallery_labels, int64_t k);

struct RankMetrics {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
};

RankMetrics rank_metrics(const Tensor& scores, std::span<const int64_t> query_labels,
                         std::span<const int64_t> gallery_labels);

struct SplitTensors {
  Tensor images;                       // [n, 3, H, W]
  std::vector<int64_t> tokens;         // n*L
  std::vector<int64_t> valid_lengths;  // n
  std::vector<int64_t> labels;         // n
};

SplitTensors stack_split(std::span<const datagen::Sample* const> samples);

// Text queries against the image gallery of the same split.
RankMetrics evaluate(model::Model& model, const SplitTensors& split);

void write_embeddings(const std::filesystem::path& path, const model::Embeddings& images,
                      const model::Embeddings& texts, std::span<const int64_t> labels);

}  // namespace manet::retrieval
