// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/retrieval.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "manetlab/array_io.hpp"

namespace manet::retrieval {

namespace {

std::vector<double> row_norms(const Tensor& t) {
  std::vector<double> n(static_cast<size_t>(t.dim(0)));
  for (int64_t r = 0; r < t.dim(0); ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < t.dim(1); ++c) s += t.at(r, c) * t.at(r, c);
    n[static_cast<size_t>(r)] = std::sqrt(s);
  }
  return n;
}

}  // namespace

Tensor cosine_scores(const Tensor& queries, const Tensor& gallery, int64_t* zero_rows) {
  if (queries.dim(1) != gallery.dim(1)) throw std::invalid_argument("embedding widths differ");
  const int64_t nq = queries.dim(0), ng = gallery.dim(0), d = queries.dim(1);
  const std::vector<double> qn = row_norms(queries), gn = row_norms(gallery);
  Tensor s(Shape{nq, ng});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < nq; ++i) {
    for (int64_t j = 0; j < ng; ++j) {
      const double denom = qn[static_cast<size_t>(i)] * gn[static_cast<size_t>(j)];
      if (denom == 0.0) continue;
      double dot = 0.0;
      for (int64_t c = 0; c < d; ++c) dot += queries.at(i, c) * gallery.at(j, c);
      s.at(i, j) = dot / denom;
    }
  }
  if (zero_rows) {
    *zero_rows = 0;
    for (double v : qn) *zero_rows += v == 0.0;
    for (double v : gn) *zero_rows += v == 0.0;
  }
  return s;
}

SimilarityMatrix fuse_similarity(const model::Embeddings& queries, const model::Embeddings& gallery) {
  SimilarityMatrix m;
  int64_t zeros = 0, zl = 0;
  m.global = cosine_scores(queries.global, gallery.global, &zeros);
  m.fused = m.global;
  if (!queries.local.empty() && !gallery.local.empty()) {
    m.local = cosine_scores(queries.local, gallery.local, &zl);
    m.fused.add_inplace(m.local);
  }
  if (zeros + zl > 0) std::clog << "warning: " << zeros + zl << " zero-norm embeddings scored as cosine 0\n";
  return m;
}

double rank_at_k(const Tensor& scores, std::span<const int64_t> query_labels,
                 std::span<const int64_t> gallery_labels, int64_t k) {
  const int64_t nq = scores.dim(0), ng = scores.dim(1);
  if (ng == 0) throw std::invalid_argument("rank_at_k: empty gallery");
  if (k < 1) throw std::invalid_argument("rank_at_k: k must be >= 1");
  if (static_cast<int64_t>(query_labels.size()) != nq || static_cast<int64_t>(gallery_labels.size()) != ng)
    throw std::invalid_argument("rank_at_k: label count mismatch");
  if (nq == 0) return 0.0;
  int64_t hits = 0;
  for (int64_t i = 0; i < nq; ++i) {
    // The best match's position in the ordering is the number of items that
    // precede it: higher score, or equal score with lower index.
    int64_t best = -1;
    for (int64_t j = 0; j < ng; ++j) {
      if (gallery_labels[static_cast<size_t>(j)] != query_labels[static_cast<size_t>(i)]) continue;
      if (best < 0 || scores.at(i, j) > scores.at(i, best)) best = j;
    }
    if (best < 0) continue;
    int64_t ahead = 0;
    for (int64_t j = 0; j < ng; ++j) {
      const double s = scores.at(i, j), b = scores.at(i, best);
      if (s > b || (s == b && j < best)) ++ahead;
    }
    hits += ahead < k;
  }
  return static_cast<double>(hits) / static_cast<double>(nq);
}

RankMetrics rank_metrics(const Tensor& scores, std::span<const int64_t> query_labels,
                         std::span<const int64_t> gallery_labels) {
  return {rank_at_k(scores, query_labels, gallery_labels, 1), rank_at_k(scores, query_labels, gallery_labels, 5),
          rank_at_k(scores, query_labels, gallery_labels, 10)};
}

SplitTensors stack_split(std::span<const datagen::Sample* const> samples) {
  SplitTensors out;
  if (samples.empty()) throw std::invalid_argument("empty split");
  const Shape img = samples.front()->image.shape();
  const int64_t per = samples.front()->image.size();
  out.images = Tensor(Shape{static_cast<int64_t>(samples.size()), img[0], img[1], img[2]});
  for (size_t i = 0; i < samples.size(); ++i) {
    const datagen::Sample& s = *samples[i];
    std::copy(s.image.data(), s.image.data() + per, out.images.data() + static_cast<int64_t>(i) * per);
    out.tokens.insert(out.tokens.end(), s.tokens.begin(), s.tokens.end());
    out.valid_lengths.push_back(s.valid_length);
    out.labels.push_back(s.identity.id);
  }
  return out;
}

RankMetrics evaluate(model::Model& model, const SplitTensors& split) {
  const model::Embeddings gallery = model.embed_images(split.images);
  const model::Embeddings queries = model.embed_texts(split.tokens, split.valid_lengths);
  const SimilarityMatrix s = fuse_similarity(queries, gallery);
  return rank_metrics(s.fused, split.labels, split.labels);
}

void write_embeddings(const std::filesystem::path& path, const model::Embeddings& images,
                      const model::Embeddings& texts, std::span<const int64_t> labels) {
  io::Archive a;
  a.attributes["kind"] = "embeddings";
  a.put("image.global", images.global);
  a.put("text.global", texts.global);
  if (!images.local.empty()) a.put("image.local", images.local);
  if (!texts.local.empty()) a.put("text.local", texts.local);
  Tensor l(Shape{static_cast<int64_t>(labels.size())});
  for (size_t i = 0; i < labels.size(); ++i) l[static_cast<int64_t>(i)] = static_cast<double>(labels[i]);
  a.put("labels", l);
  io::write_archive(path, a);
}

}  // namespace manet::retrieval
