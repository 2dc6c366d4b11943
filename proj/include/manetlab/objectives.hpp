// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objective: identification, bi-directional ranking with surrogate
// texts, and the consistency triplet across channel filtration.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "manetlab/autograd.hpp"
#include "manetlab/nn.hpp"

namespace manet::objectives {

class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One bias-free classifier per head, applied to both modalities.
struct ClassifierBank {
  Var global;               // [N_y, d_g]
  std::vector<Var> local;   // K x [N_y, d_c]

  ClassifierBank() = default;
  ClassifierBank(int64_t classes, int64_t global_dim, int64_t local_heads, int64_t local_dim, std::mt19937_64& rng);
  int64_t classes() const { return global.dim(0); }
  void register_params(ParamRegistry& reg);
};

struct LossConfig {
  double alpha1 = 0.2;
  double alpha2 = 0.2;
  double alpha3 = 0.2;
  double lambda1 = 0.1;
  double lambda2 = 1.0;
};

struct LossBreakdown {
  double id = 0.0;
  double rank_global = 0.0;
  double rank_local = 0.0;
  double cons = 0.0;
  double total = 0.0;
};

// Sum over heads of CE(image) + CE(text). Local inputs may be undefined, in
// which case only the global head counts.
Var id_loss(const Var& v_global, const Var& t_global, const Var& v_local, const Var& t_local,
            std::span<const int64_t> labels, const ClassifierBank& bank);

// For each anchor, a different row with the same label chosen uniformly; the
// anchor itself when it is the only one of its identity.
std::vector<int64_t> select_surrogates(std::span<const int64_t> labels, std::mt19937_64& rng);

// Four-hinge ranking loss for one granularity, batch-averaged.
Var ranking_loss(const Var& v, const Var& t, std::span<const int64_t> surrogates, std::span<const int64_t> labels,
                 const LossConfig& config);

// f_tilde / f_hat are pooled features [B, C] before and after filtration.
Var consistency_loss(const Var& f_tilde, const Var& f_hat, std::span<const int64_t> labels, double alpha3);

LossBreakdown total_loss(double id, double rank_global, double rank_local, double cons, double lambda2);

// Hardest different-label column of row i in sim (largest value, lowest
// index on ties).
int64_t hardest_negative_in_row(const Tensor& sim, int64_t row, std::span<const int64_t> labels);
int64_t hardest_negative_in_col(const Tensor& sim, int64_t col, std::span<const int64_t> labels);

}  // namespace manet::objectives
