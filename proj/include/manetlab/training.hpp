// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: two-group Adam, warmup plus step decay, identity-balanced
// batches, checkpoints and per-epoch metrics.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "manetlab/array_io.hpp"
#include "manetlab/datagen.hpp"
#include "manetlab/model.hpp"
#include "manetlab/objectives.hpp"
#include "manetlab/retrieval.hpp"

namespace manet::training {

struct TrainConfig {
  int64_t epochs = 70;
  int64_t identities_per_batch = 16;  // P
  int64_t samples_per_identity = 4;   // Q
  double lr_backbone = 0.001;
  double lr_rest = 0.01;
  std::vector<int64_t> decay_epochs{30, 50};
  double decay_factor = 0.1;
  int64_t warmup_epochs = 10;
  double flip_probability = 0.5;
  uint64_t seed = 1;
  objectives::LossConfig loss;

  int64_t batch_size() const { return identities_per_batch * samples_per_identity; }
  void validate() const;
};

TrainConfig paper_schedule();
// Desk-scale defaults: 40 epochs, batches of 8 identities x 4 images.
TrainConfig toy_schedule();

double lr_schedule(int64_t epoch, double base_lr, const TrainConfig& config);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // Updates every parameter of the registry from its gradient using the lr of
  // its group.
  void step(ParamRegistry& registry, double lr_backbone, double lr_rest);
  int64_t steps() const { return t_; }

  void save(io::Archive& archive) const;
  void load(const io::Archive& archive);

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// P identities x Q samples. Each epoch covers ceil(n / (P*Q)) batches;
// identities cycle through a fresh permutation, samples are drawn without
// replacement within an identity while possible.
std::vector<std::vector<int64_t>> pk_batches(std::span<const int64_t> labels, int64_t p, int64_t q,
                                             std::mt19937_64& rng);

void flip_horizontal(Tensor& images, int64_t index);

model::Batch make_batch(std::span<const datagen::Sample* const> samples, std::span<const int64_t> indices,
                        double flip_probability, std::mt19937_64& rng);

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;  // rest-group lr
  double loss_id = 0.0;
  double loss_rank = 0.0;
  double loss_cons = 0.0;
  double loss_total = 0.0;
  retrieval::RankMetrics rank;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_r1 = 0.0;
  int64_t best_epoch = -1;
  retrieval::RankMetrics final_rank;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  bool evaluate_each_epoch = true;
  bool verbose = false;
};

TrainResult train(model::Model& model, const datagen::Dataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

const char* metrics_header();
std::string metrics_row(const EpochMetrics& m);

void save_checkpoint(const std::filesystem::path& path, const model::Model& model, const Adam* optimizer,
                     int64_t epoch);
// Throws CompatibilityError when the stored config hash differs.
int64_t load_checkpoint(const std::filesystem::path& path, model::Model& model, Adam* optimizer);

uint64_t parameter_hash(const model::Model& model);

}  // namespace manet::training
