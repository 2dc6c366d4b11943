// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace manet::training {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (identities_per_batch < 2) throw std::invalid_argument("a batch needs at least 2 identities");
  if (samples_per_identity < 1) throw std::invalid_argument("samples_per_identity must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw std::invalid_argument("decay_factor must be in (0,1)");
  if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
  for (int64_t d : decay_epochs)
    if (warmup_epochs >= d) throw std::invalid_argument("warmup must end before the first decay epoch");
  if (lr_backbone < 0.0 || lr_rest < 0.0) throw std::invalid_argument("learning rates must be >= 0");
  if (flip_probability < 0.0 || flip_probability > 1.0) throw std::invalid_argument("flip probability outside [0,1]");
}

TrainConfig paper_schedule() { return TrainConfig{}; }

TrainConfig toy_schedule() {
  TrainConfig c;
  c.epochs = 40;
  c.identities_per_batch = 8;
  c.samples_per_identity = 4;
  return c;
}

double lr_schedule(int64_t epoch, double base_lr, const TrainConfig& config) {
  if (epoch < config.warmup_epochs)
    return base_lr * (0.1 + 0.9 * static_cast<double>(epoch) / static_cast<double>(config.warmup_epochs));
  double lr = base_lr;
  for (int64_t d : config.decay_epochs)
    if (epoch >= d) lr *= config.decay_factor;
  return lr;
}

void Adam::step(ParamRegistry& registry, double lr_backbone, double lr_rest) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const ParamRef& p : registry.params()) {
    Var v = p.var;
    if (!v.has_grad()) continue;
    const double lr = p.group == ParamGroup::kBackbone ? lr_backbone : lr_rest;
    Tensor& value = v.mutable_value();
    const Tensor& g = v.grad_storage();
    Tensor& m = m_.try_emplace(p.name, value.shape()).first->second;
    Tensor& s = v_.try_emplace(p.name, value.shape()).first->second;
    for (int64_t i = 0; i < static_cast<int64_t>(value.size()); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      s[i] = beta2_ * s[i] + (1.0 - beta2_) * g[i] * g[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps_);
    }
  }
}

void Adam::save(io::Archive& archive) const {
  archive.attributes["adam.step"] = std::to_string(t_);
  for (const auto& [name, t] : m_) archive.put("adam.m/" + name, t);
  for (const auto& [name, t] : v_) archive.put("adam.v/" + name, t);
}

void Adam::load(const io::Archive& archive) {
  m_.clear();
  v_.clear();
  auto it = archive.attributes.find("adam.step");
  t_ = it == archive.attributes.end() ? 0 : std::stoll(it->second);
  for (const auto& [name, t] : archive.arrays) {
    if (name.rfind("adam.m/", 0) == 0) m_[name.substr(7)] = t;
    if (name.rfind("adam.v/", 0) == 0) v_[name.substr(7)] = t;
  }
}

std::vector<std::vector<int64_t>> pk_batches(std::span<const int64_t> labels, int64_t p, int64_t q,
                                             std::mt19937_64& rng) {
  std::map<int64_t, std::vector<int64_t>> by_id;
  for (size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(static_cast<int64_t>(i));
  std::vector<int64_t> ids;
  for (auto& [id, members] : by_id) {
    ids.push_back(id);
    std::shuffle(members.begin(), members.end(), rng);
  }
  if (static_cast<int64_t>(ids.size()) < 2) throw std::invalid_argument("PK sampler needs at least 2 identities");
  p = std::min<int64_t>(p, static_cast<int64_t>(ids.size()));
  std::map<int64_t, size_t> cursor;
  const int64_t n = static_cast<int64_t>(labels.size());
  const int64_t count = (n + p * q - 1) / (p * q);
  std::vector<int64_t> order;
  std::vector<std::vector<int64_t>> batches;
  for (int64_t b = 0; b < count; ++b) {
    std::vector<int64_t> batch, batch_ids;
    for (int64_t k = 0; k < p; ++k) {
      if (order.empty()) {
        order = ids;
        std::shuffle(order.begin(), order.end(), rng);
      }
      // prefer the latest identity not already in this batch
      auto pick = order.end() - 1;
      while (pick != order.begin() && std::count(batch_ids.begin(), batch_ids.end(), *pick) > 0) --pick;
      if (std::count(batch_ids.begin(), batch_ids.end(), *pick) > 0) {
        const std::vector<int64_t> rest = ids;
        order.insert(order.begin(), rest.begin(), rest.end());
        std::shuffle(order.begin(), order.begin() + static_cast<long>(rest.size()), rng);
        pick = order.begin() + static_cast<long>(rest.size()) - 1;
        while (std::count(batch_ids.begin(), batch_ids.end(), *pick) > 0) --pick;
      }
      const int64_t id = *pick;
      order.erase(pick);
      batch_ids.push_back(id);
      std::vector<int64_t>& members = by_id[id];
      for (int64_t j = 0; j < q; ++j) {
        size_t& c = cursor[id];
        if (c == members.size()) {
          std::shuffle(members.begin(), members.end(), rng);
          c = 0;
        }
        batch.push_back(members[c++]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

void flip_horizontal(Tensor& images, int64_t index) {
  const int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  double* base = images.data() + index * c * h * w;
  for (int64_t r = 0; r < c * h; ++r) std::reverse(base + r * w, base + (r + 1) * w);
}

model::Batch make_batch(std::span<const datagen::Sample* const> samples, std::span<const int64_t> indices,
                        double flip_probability, std::mt19937_64& rng) {
  std::vector<const datagen::Sample*> chosen;
  for (int64_t i : indices) chosen.push_back(samples[static_cast<size_t>(i)]);
  retrieval::SplitTensors st = retrieval::stack_split(chosen);
  std::bernoulli_distribution flip(flip_probability);
  for (int64_t i = 0; i < static_cast<int64_t>(chosen.size()); ++i)
    if (flip(rng)) flip_horizontal(st.images, i);
  model::Batch b;
  b.images = std::move(st.images);
  b.tokens = std::move(st.tokens);
  b.valid_lengths = std::move(st.valid_lengths);
  b.labels = std::move(st.labels);
  for (const auto* s : chosen) b.sample_ids.push_back(s->index);
  return b;
}

const char* metrics_header() { return "epoch,lr,loss_id,loss_rank,loss_cons,loss_total,r1,r5,r10"; }

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(10) << m.epoch << ',' << m.lr << ',' << m.loss_id << ',' << m.loss_rank << ','
     << m.loss_cons << ',' << m.loss_total << ',' << m.rank.r1 << ',' << m.rank.r5 << ',' << m.rank.r10;
  return os.str();
}

namespace {

io::Archive model_archive(const model::Model& model) {
  io::Archive a;
  a.attributes["config_hash"] = std::to_string(model.config().hash());
  a.attributes["model_config"] = model.config().canonical();
  for (const ParamRef& p : model.registry().params()) a.put("param/" + p.name, p.var.value());
  for (const BufferRef& b : model.registry().buffers()) a.put("buffer/" + b.name, *b.tensor);
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::Model& model, const Adam* optimizer,
                     int64_t epoch) {
  io::Archive a = model_archive(model);
  a.attributes["epoch"] = std::to_string(epoch);
  if (optimizer) optimizer->save(a);
  io::write_archive(path, a);
}

int64_t load_checkpoint(const std::filesystem::path& path, model::Model& model, Adam* optimizer) {
  const io::Archive a = io::read_archive(path);
  auto it = a.attributes.find("config_hash");
  if (it == a.attributes.end() || it->second != std::to_string(model.config().hash()))
    throw CompatibilityError("checkpoint was written for a different model configuration");
  for (const ParamRef& p : model.registry().params()) {
    Var v = p.var;
    const Tensor& t = a.get("param/" + p.name);
    if (!same_shape(t, v.value())) throw CompatibilityError("shape mismatch for " + p.name);
    v.mutable_value() = t;
  }
  for (const BufferRef& b : model.registry().buffers()) *b.tensor = a.get("buffer/" + b.name);
  if (optimizer) optimizer->load(a);
  auto e = a.attributes.find("epoch");
  return e == a.attributes.end() ? -1 : std::stoll(e->second);
}

uint64_t parameter_hash(const model::Model& model) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    for (double d : t.values()) {
      uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const ParamRef& p : model.registry().params()) mix(p.var.value());
  for (const BufferRef& b : model.registry().buffers()) mix(*b.tensor);
  return h;
}

TrainResult train(model::Model& model, const datagen::Dataset& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  const std::vector<const datagen::Sample*> train_split = dataset.split(false);
  const std::vector<const datagen::Sample*> test_split = dataset.split(true);
  if (train_split.empty()) throw std::invalid_argument("dataset has no training samples");
  std::vector<int64_t> labels;
  for (const auto* s : train_split) labels.push_back(s->identity.id);
  const retrieval::SplitTensors eval_split =
      retrieval::stack_split(test_split.empty() ? train_split : test_split);

  std::mt19937_64 rng(config.seed);
  Adam adam;
  TrainResult result;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.csv");
    metrics << metrics_header() << '\n';
  }

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr_b = lr_schedule(epoch, config.lr_backbone, config);
    const double lr_r = lr_schedule(epoch, config.lr_rest, config);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr_r;
    const auto batches = pk_batches(labels, config.identities_per_batch, config.samples_per_identity, rng);
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      model::Batch batch = make_batch(train_split, batches[bi], config.flip_probability, rng);
      const std::vector<int64_t> surrogates = objectives::select_surrogates(batch.labels, rng);
      for (const ParamRef& p : model.registry().params()) Var(p.var).zero_grad();
      model::Output out = model.forward(batch, NormMode::kBatch);
      model::LossResult loss;
      try {
        loss = model.loss(out, batch.labels, surrogates, config.loss);
      } catch (const objectives::NumericError& e) {
        std::ostringstream os;
        os << e.what() << " at epoch " << epoch << ", batch " << bi << ", samples";
        for (int64_t id : batch.sample_ids) os << ' ' << id;
        throw TrainingError(os.str());
      }
      loss.total.backward();
      adam.step(model.registry(), lr_b, lr_r);
      em.loss_id += loss.parts.id;
      em.loss_rank += loss.parts.rank_global + loss.parts.rank_local;
      em.loss_cons += loss.parts.cons;
      em.loss_total += loss.parts.total;
    }
    const double nb = static_cast<double>(batches.size());
    em.loss_id /= nb;
    em.loss_rank /= nb;
    em.loss_cons /= nb;
    em.loss_total /= nb;
    const bool last = epoch + 1 == config.epochs;
    if (options.evaluate_each_epoch || last) em.rank = retrieval::evaluate(model, eval_split);
    if (options.verbose)
      std::clog << "epoch " << epoch << " loss " << em.loss_total << " r1 " << em.rank.r1 << '\n';
    if (metrics.is_open()) metrics << metrics_row(em) << '\n' << std::flush;
    if ((options.evaluate_each_epoch || last) && (result.best_epoch < 0 || em.rank.r1 > result.best_r1)) {
      result.best_r1 = em.rank.r1;
      result.best_epoch = epoch;
      if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "best.ckpt", model, &adam, epoch);
    }
    result.history.push_back(em);
  }
  result.final_rank = result.history.back().rank;
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "last.ckpt", model, &adam, config.epochs - 1);
  return result;
}

}  // namespace manet::training
