// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode tape over Tensor. A Var is a shared handle to a node;
// parameters are leaf Vars that outlive every graph built from them, while
// intermediate nodes die with the last Var that references them.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "manetlab/tensor.hpp"

namespace manet {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& out_grad)> backward;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Leaf storage, for optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  // Gradient accumulated by backward(); zeros when none reached this node.
  Tensor grad() const;
  Tensor& grad_storage() { return node_->ensure_grad(); }
  void zero_grad();

  // Seeds d(self)/d(self) = 1; self must hold exactly one element.
  void backward() const;

  double item() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Var from_node(std::shared_ptr<detail::Node> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(int64_t features)
      : running_mean(Shape{features}, 0.0), running_var(Shape{features}, 1.0) {}
};

enum class NormMode {
  kBatch,   // batch statistics, running stats updated
  kFrozen,  // running statistics, nothing updated
};

using Offsets = std::vector<int64_t>;
Offsets uniform_offsets(int64_t segments, int64_t size);

namespace ag {

Var constant(Tensor value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var one_minus(const Var& a);

// a: [R,D], v: [D]
Var add_row(const Var& a, const Var& v);
Var mul_row(const Var& a, const Var& v);

Var reshape(const Var& a, Shape shape);

// op(a) op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// x: [R,in], w: [out,in] -> x w^T : [R,out]
Var linear(const Var& x, const Var& w);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, int64_t start, int64_t len);
Var slice_rows(const Var& a, int64_t start, int64_t len);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const int64_t> rows);
// Element picks (row, col) -> [P].
Var pick(const Var& a, std::span<const std::pair<int64_t, int64_t>> cells);

// Segment s spans rows [offsets[s], offsets[s+1]).
Var segment_sum(const Var& a, const Offsets& offsets);
Var segment_mean(const Var& a, const Offsets& offsets);
Var segment_max(const Var& a, const Offsets& offsets);
// Inverse of a segment reduction: row r of the result is a[segment(r)].
Var expand_segments(const Var& a, const Offsets& offsets);
// [R,K] -> [R,K*times], each value repeated `times` times in place.
Var repeat_cols(const Var& a, int64_t times);

Var pair_difference(const Var& x, const Var& y, std::span<const int64_t> ix, std::span<const int64_t> iy);

// Per-row L2 normalization; zero rows stay zero.
Var l2_normalize_rows(const Var& a);

Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride, int64_t pad);
// [B,C,H,W] <-> [B*H*W, C], row-major over H then W within a sample.
Var nchw_to_rows(const Var& x);
Var rows_to_nchw(const Var& rows, int64_t batch, int64_t channels, int64_t h, int64_t w);

// Rows of `table` selected by ids; row `padding_id` receives no gradient.
Var embedding(const Var& table, std::span<const int64_t> ids, int64_t padding_id = 0);

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, NormMode mode);
// x: [S*N, C] rows, statistics per (segment, channel) over N rows.
Var instance_norm(const Var& x, int64_t segment_rows, const Var& gamma, const Var& beta, double eps = 1e-5);

// Pairwise cosine similarities, a: [n,d], b: [m,d] -> [n,m]. Zero rows score 0.
Var cosine_matrix(const Var& a, const Var& b);
// Row-wise cosine of equally shaped a, b -> [n].
Var cosine_rows(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
// Mean over rows of softmax cross-entropy.
Var cross_entropy(const Var& logits, std::span<const int64_t> labels);

}  // namespace ag
}  // namespace manet
