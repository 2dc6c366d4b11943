// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/objectives.hpp"

#include <cmath>
#include <string>

namespace manet::objectives {

ClassifierBank::ClassifierBank(int64_t classes, int64_t global_dim, int64_t local_heads, int64_t local_dim,
                               std::mt19937_64& rng)
    : global(init::fan_in_uniform({classes, global_dim}, global_dim, rng)) {
  for (int64_t k = 0; k < local_heads; ++k) local.push_back(init::fan_in_uniform({classes, local_dim}, local_dim, rng));
}

void ClassifierBank::register_params(ParamRegistry& reg) {
  reg.param("id.global", global, ParamGroup::kRest);
  for (size_t k = 0; k < local.size(); ++k) reg.param("id.local" + std::to_string(k), local[k], ParamGroup::kRest);
}

Var id_loss(const Var& v_global, const Var& t_global, const Var& v_local, const Var& t_local,
            std::span<const int64_t> labels, const ClassifierBank& bank) {
  Var loss = ag::add(ag::cross_entropy(ag::linear(v_global, bank.global), labels),
                     ag::cross_entropy(ag::linear(t_global, bank.global), labels));
  if (!v_local.defined()) return loss;
  const int64_t heads = static_cast<int64_t>(bank.local.size());
  if (heads == 0) return loss;
  const int64_t d = v_local.dim(1) / heads;
  if (d * heads != v_local.dim(1) || t_local.dim(1) != v_local.dim(1))
    throw std::invalid_argument("local features do not split into classifier heads");
  for (int64_t k = 0; k < heads; ++k) {
    const Var& w = bank.local[static_cast<size_t>(k)];
    loss = ag::add(loss, ag::cross_entropy(ag::linear(ag::slice_cols(v_local, k * d, d), w), labels));
    loss = ag::add(loss, ag::cross_entropy(ag::linear(ag::slice_cols(t_local, k * d, d), w), labels));
  }
  return loss;
}

std::vector<int64_t> select_surrogates(std::span<const int64_t> labels, std::mt19937_64& rng) {
  const int64_t n = static_cast<int64_t>(labels.size());
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::vector<int64_t> same;
    for (int64_t j = 0; j < n; ++j)
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) same.push_back(j);
    if (same.empty()) {
      out[static_cast<size_t>(i)] = i;
    } else {
      std::uniform_int_distribution<size_t> pick(0, same.size() - 1);
      out[static_cast<size_t>(i)] = same[pick(rng)];
    }
  }
  return out;
}

int64_t hardest_negative_in_row(const Tensor& sim, int64_t row, std::span<const int64_t> labels) {
  int64_t best = -1;
  for (int64_t j = 0; j < sim.dim(1); ++j) {
    if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(row)]) continue;
    if (best < 0 || sim.at(row, j) > sim.at(row, best)) best = j;
  }
  if (best < 0) throw DegenerateBatchError("batch has no sample of a different identity");
  return best;
}

int64_t hardest_negative_in_col(const Tensor& sim, int64_t col, std::span<const int64_t> labels) {
  int64_t best = -1;
  for (int64_t i = 0; i < sim.dim(0); ++i) {
    if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(col)]) continue;
    if (best < 0 || sim.at(i, col) > sim.at(best, col)) best = i;
  }
  if (best < 0) throw DegenerateBatchError("batch has no sample of a different identity");
  return best;
}

namespace {

void check_batch(const Var& a, const Var& b, std::span<const int64_t> labels) {
  const int64_t n = a.dim(0);
  if (b.dim(0) != n || static_cast<int64_t>(labels.size()) != n) throw std::invalid_argument("batch size mismatch");
  if (n == 0) throw DegenerateBatchError("empty batch");
}

Var hinge(const Var& margin_minus_pos, const Var& neg) { return ag::relu(ag::add(margin_minus_pos, neg)); }

}  // namespace

Var ranking_loss(const Var& v, const Var& t, std::span<const int64_t> surrogates, std::span<const int64_t> labels,
                 const LossConfig& config) {
  check_batch(v, t, labels);
  const int64_t n = v.dim(0);
  if (static_cast<int64_t>(surrogates.size()) != n) throw std::invalid_argument("surrogate count mismatch");
  Var sim = ag::cosine_matrix(v, t);  // sim[i][j] = S(v_i, t_j)
  std::vector<std::pair<int64_t, int64_t>> pos, img_neg, txt_neg, sur_pos, sur_neg;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t tn = hardest_negative_in_row(sim.value(), i, labels);
    const int64_t vn = hardest_negative_in_col(sim.value(), i, labels);
    const int64_t s = surrogates[static_cast<size_t>(i)];
    if (s < 0 || s >= n) throw std::out_of_range("surrogate index out of range");
    pos.emplace_back(i, i);
    img_neg.emplace_back(i, tn);  // S(v_p, t_n)
    txt_neg.emplace_back(vn, i);  // S(v_n, t_p)
    sur_pos.emplace_back(i, s);   // S(v_p, t_bar_p)
    sur_neg.emplace_back(vn, s);  // S(v_n, t_bar_p)
  }
  Var m1 = ag::add_scalar(ag::scale(ag::pick(sim, pos), -1.0), config.alpha1);
  Var m2 = ag::add_scalar(ag::scale(ag::pick(sim, sur_pos), -1.0), config.alpha2);
  Var l1 = hinge(m1, ag::pick(sim, img_neg));
  Var l2 = hinge(m1, ag::pick(sim, txt_neg));
  Var l3 = hinge(m2, ag::pick(sim, img_neg));
  Var l4 = hinge(m2, ag::pick(sim, sur_neg));
  Var terms = ag::add(ag::add(l1, l2), ag::scale(ag::add(l3, l4), config.lambda1));
  return ag::mean(terms);
}

Var consistency_loss(const Var& f_tilde, const Var& f_hat, std::span<const int64_t> labels, double alpha3) {
  check_batch(f_tilde, f_hat, labels);
  const int64_t n = f_tilde.dim(0);
  Var sim = ag::cosine_matrix(f_tilde, f_hat);  // sim[i][j] = S(f~_i, f^_j)
  std::vector<std::pair<int64_t, int64_t>> pos, hat_neg, tilde_neg;
  for (int64_t i = 0; i < n; ++i) {
    pos.emplace_back(i, i);
    hat_neg.emplace_back(i, hardest_negative_in_row(sim.value(), i, labels));
    tilde_neg.emplace_back(hardest_negative_in_col(sim.value(), i, labels), i);
  }
  Var m = ag::add_scalar(ag::scale(ag::pick(sim, pos), -1.0), alpha3);
  return ag::mean(ag::add(hinge(m, ag::pick(sim, hat_neg)), hinge(m, ag::pick(sim, tilde_neg))));
}

LossBreakdown total_loss(double id, double rank_global, double rank_local, double cons, double lambda2) {
  const double parts[] = {id, rank_global, rank_local, cons};
  const char* names[] = {"id", "rank_global", "rank_local", "cons"};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(parts[i])) throw NumericError(std::string("non-finite loss component: ") + names[i]);
  LossBreakdown b{id, rank_global, rank_local, cons, 0.0};
  b.total = id + rank_global + rank_local + lambda2 * cons;
  return b;
}

}  // namespace manet::objectives
