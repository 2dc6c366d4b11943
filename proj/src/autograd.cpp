// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "manetlab/kernels.hpp"

namespace manet {
namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

// Builds a result node. `fn` receives the output gradient and must accumulate
// into parent gradients through grad_of().
template <class Fn>
Var make_op(Tensor value, std::initializer_list<Var> inputs, Fn&& fn) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var& v : inputs) node->parents.push_back(v.node());
    node->backward = std::forward<Fn>(fn);
  }
  return Var::from_node(std::move(node));
}

template <class Fn>
Var make_op_vec(Tensor value, std::span<const Var> inputs, Fn&& fn) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var& v : inputs) node->parents.push_back(v.node());
    node->backward = std::forward<Fn>(fn);
  }
  return Var::from_node(std::move(node));
}

// Gradient buffer of a parent, or null when it does not need one.
double* grad_of(const NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  return n->ensure_grad().data();
}

void require_rank(const Var& v, int rank, const char* what) {
  if (v.value().rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(v.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void check_offsets(const Offsets& off, int64_t rows, const char* what) {
  if (off.empty() || off.front() != 0 || off.back() != rows) {
    throw std::invalid_argument(std::string(what) + ": offsets must span [0, rows]");
  }
  for (size_t s = 1; s < off.size(); ++s) {
    if (off[s] < off[s - 1]) throw std::invalid_argument(std::string(what) + ": offsets must be non-decreasing");
  }
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (has_grad()) return node_->grad;
  return Tensor(node_->value.shape());
}

void Var::zero_grad() {
  if (node_ && node_->grad.size()) node_->grad.fill(0.0);
}

double Var::item() const {
  if (value().size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

void Var::backward() const {
  if (value().size() != 1) throw std::logic_error("backward() requires a single-element output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(n->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Offsets uniform_offsets(int64_t segments, int64_t size) {
  Offsets off(static_cast<size_t>(segments + 1));
  for (int64_t s = 0; s <= segments; ++s) off[static_cast<size_t>(s)] = s * size;
  return off;
}

namespace ag {

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  out.add_inplace(b.value());
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = grad_of(pb))
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = grad_of(pb))
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
    if (double* gb = grad_of(pb))
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, s](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var one_minus(const Var& a) { return add_scalar(scale(a, -1.0), 1.0); }

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i)
        if (pa->value[i] > 0.0) ga[i] += g[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  NodePtr pa = a.node();
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    detail::Node* self = res.node().get();
    res.node()->backward = [pa, self](const Tensor& g) {
      double* ga = grad_of(pa);
      for (size_t i = 0; i < g.size(); ++i) {
        const double s = self->value[i];
        ga[i] += g[i] * s * (1.0 - s);
      }
    };
  }
  return res;
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  NodePtr pa = a.node();
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    detail::Node* self = res.node().get();
    res.node()->backward = [pa, self](const Tensor& g) {
      double* ga = grad_of(pa);
      for (size_t i = 0; i < g.size(); ++i) {
        const double t = self->value[i];
        ga[i] += g[i] * (1.0 - t * t);
      }
    };
  }
  return res;
}

Var add_row(const Var& a, const Var& v) {
  require_rank(a, 2, "add_row");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (v.value().size() != static_cast<size_t>(cols)) throw std::invalid_argument("add_row: width mismatch");
  Tensor out = a.value();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out.at(r, c) += v.value()[static_cast<size_t>(c)];
  NodePtr pa = a.node(), pv = v.node();
  return make_op(std::move(out), {a, v}, [pa, pv, rows, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gv = grad_of(pv))
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gv[c] += g.at(r, c);
  });
}

Var mul_row(const Var& a, const Var& v) {
  require_rank(a, 2, "mul_row");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (v.value().size() != static_cast<size_t>(cols)) throw std::invalid_argument("mul_row: width mismatch");
  Tensor out = a.value();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out.at(r, c) *= v.value()[static_cast<size_t>(c)];
  NodePtr pa = a.node(), pv = v.node();
  return make_op(std::move(out), {a, v}, [pa, pv, rows, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) ga[r * cols + c] += g.at(r, c) * pv->value[static_cast<size_t>(c)];
    if (double* gv = grad_of(pv))
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gv[c] += g.at(r, c) * pa->value.at(r, c);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  using kernels::Trans;
  const Trans ta = trans_a ? Trans::kYes : Trans::kNo;
  const Trans tb = trans_b ? Trans::kYes : Trans::kNo;
  Tensor out(Shape{m, n});
  kernels::gemm(ta, tb, m, n, k, a.value().data(), b.value().data(), out.data(), false);
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [=](const Tensor& g) {
    // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
    if (double* ga = grad_of(pa)) {
      if (!trans_a) {
        kernels::gemm(Trans::kNo, trans_b ? Trans::kNo : Trans::kYes, m, k, n, g.data(), pb->value.data(), ga, true);
      } else {
        kernels::gemm(trans_b ? Trans::kYes : Trans::kNo, Trans::kYes, k, m, n, pb->value.data(), g.data(), ga, true);
      }
    }
    if (double* gb = grad_of(pb)) {
      if (!trans_b) {
        kernels::gemm(trans_a ? Trans::kNo : Trans::kYes, Trans::kNo, k, n, m, pa->value.data(), g.data(), gb, true);
      } else {
        kernels::gemm(Trans::kYes, trans_a ? Trans::kYes : Trans::kNo, n, k, m, g.data(), pa->value.data(), gb, true);
      }
    }
  });
}

Var linear(const Var& x, const Var& w) { return matmul(x, w, false, true); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t rows = parts[0].dim(0);
  std::vector<int64_t> widths;
  int64_t total = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor out(Shape{rows, total});
  int64_t off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    for (int64_t r = 0; r < rows; ++r)
      std::copy(v.data() + r * widths[i], v.data() + (r + 1) * widths[i], out.data() + r * total + off);
    off += widths[i];
  }
  std::vector<NodePtr> nodes;
  for (const Var& p : parts) nodes.push_back(p.node());
  return make_op_vec(std::move(out), parts, [nodes, widths, rows, total](const Tensor& g) {
    int64_t off = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (double* gp = grad_of(nodes[i]))
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += g[static_cast<size_t>(r * total + off + c)];
      off += widths[i];
    }
  });
}

Var slice_cols(const Var& a, int64_t start, int64_t len) {
  require_rank(a, 2, "slice_cols");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (start < 0 || len < 0 || start + len > cols) throw std::out_of_range("slice_cols out of range");
  Tensor out(Shape{rows, len});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < len; ++c) out.at(r, c) = a.value().at(r, start + c);
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, rows, cols, start, len](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < len; ++c) ga[r * cols + start + c] += g.at(r, c);
  });
}

Var slice_rows(const Var& a, int64_t start, int64_t len) {
  require_rank(a, 2, "slice_rows");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (start < 0 || len < 0 || start + len > rows) throw std::out_of_range("slice_rows out of range");
  Tensor out(Shape{len, cols});
  std::copy(a.value().data() + start * cols, a.value().data() + (start + len) * cols, out.data());
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, start, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < g.size(); ++i) ga[start * cols + static_cast<int64_t>(i)] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int64_t cols = parts[0].dim(1);
  int64_t rows = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.dim(0);
  }
  Tensor out(Shape{rows, cols});
  std::vector<NodePtr> nodes;
  std::vector<int64_t> starts;
  int64_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off * cols);
    nodes.push_back(p.node());
    starts.push_back(off);
    off += p.dim(0);
  }
  return make_op_vec(std::move(out), parts, [nodes, starts, cols](const Tensor& g) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (double* gp = grad_of(nodes[i])) {
        const size_t n = nodes[i]->value.size();
        for (size_t j = 0; j < n; ++j) gp[j] += g[static_cast<size_t>(starts[i] * cols) + j];
      }
    }
  });
}

Var gather_rows(const Var& a, std::span<const int64_t> rows) {
  require_rank(a, 2, "gather_rows");
  const int64_t n = a.dim(0), cols = a.dim(1);
  std::vector<int64_t> idx(rows.begin(), rows.end());
  Tensor out(Shape{static_cast<int64_t>(idx.size()), cols});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw std::out_of_range("gather_rows: row index out of range");
    std::copy(a.value().data() + idx[i] * cols, a.value().data() + (idx[i] + 1) * cols,
              out.data() + static_cast<int64_t>(i) * cols);
  }
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, idx = std::move(idx), cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += g[i * static_cast<size_t>(cols) + static_cast<size_t>(c)];
  });
}

Var pick(const Var& a, std::span<const std::pair<int64_t, int64_t>> cells) {
  require_rank(a, 2, "pick");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  std::vector<int64_t> flat;
  flat.reserve(cells.size());
  for (auto [r, c] : cells) {
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw std::out_of_range("pick: cell out of range");
    flat.push_back(r * cols + c);
  }
  Tensor out(Shape{static_cast<int64_t>(flat.size())});
  for (size_t i = 0; i < flat.size(); ++i) out[i] = a.value()[static_cast<size_t>(flat[i])];
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, flat = std::move(flat)](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < flat.size(); ++i) ga[flat[i]] += g[i];
  });
}

Var segment_sum(const Var& a, const Offsets& offsets) {
  require_rank(a, 2, "segment_sum");
  const int64_t cols = a.dim(1);
  check_offsets(offsets, a.dim(0), "segment_sum");
  const auto segs = static_cast<int64_t>(offsets.size()) - 1;
  Tensor out(Shape{segs, cols});
  for (int64_t s = 0; s < segs; ++s)
    for (int64_t r = offsets[static_cast<size_t>(s)]; r < offsets[static_cast<size_t>(s) + 1]; ++r)
      for (int64_t c = 0; c < cols; ++c) out.at(s, c) += a.value().at(r, c);
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, offsets, segs, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t s = 0; s < segs; ++s)
        for (int64_t r = offsets[static_cast<size_t>(s)]; r < offsets[static_cast<size_t>(s) + 1]; ++r)
          for (int64_t c = 0; c < cols; ++c) ga[r * cols + c] += g.at(s, c);
  });
}

Var segment_mean(const Var& a, const Offsets& offsets) {
  require_rank(a, 2, "segment_mean");
  const int64_t cols = a.dim(1);
  check_offsets(offsets, a.dim(0), "segment_mean");
  const auto segs = static_cast<int64_t>(offsets.size()) - 1;
  Tensor out(Shape{segs, cols});
  for (int64_t s = 0; s < segs; ++s) {
    const int64_t b = offsets[static_cast<size_t>(s)], e = offsets[static_cast<size_t>(s) + 1];
    if (e == b) throw std::invalid_argument("segment_mean: empty segment");
    for (int64_t r = b; r < e; ++r)
      for (int64_t c = 0; c < cols; ++c) out.at(s, c) += a.value().at(r, c);
    for (int64_t c = 0; c < cols; ++c) out.at(s, c) /= static_cast<double>(e - b);
  }
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, offsets, segs, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t s = 0; s < segs; ++s) {
        const int64_t b = offsets[static_cast<size_t>(s)], e = offsets[static_cast<size_t>(s) + 1];
        const double inv = 1.0 / static_cast<double>(e - b);
        for (int64_t r = b; r < e; ++r)
          for (int64_t c = 0; c < cols; ++c) ga[r * cols + c] += g.at(s, c) * inv;
      }
  });
}

Var segment_max(const Var& a, const Offsets& offsets) {
  require_rank(a, 2, "segment_max");
  const int64_t cols = a.dim(1);
  check_offsets(offsets, a.dim(0), "segment_max");
  const auto segs = static_cast<int64_t>(offsets.size()) - 1;
  Tensor out(Shape{segs, cols});
  std::vector<int64_t> arg(static_cast<size_t>(segs * cols));
  for (int64_t s = 0; s < segs; ++s) {
    const int64_t b = offsets[static_cast<size_t>(s)], e = offsets[static_cast<size_t>(s) + 1];
    if (e == b) throw std::invalid_argument("segment_max: empty segment");
    for (int64_t c = 0; c < cols; ++c) {
      int64_t best = b;
      for (int64_t r = b + 1; r < e; ++r)
        if (a.value().at(r, c) > a.value().at(best, c)) best = r;
      out.at(s, c) = a.value().at(best, c);
      arg[static_cast<size_t>(s * cols + c)] = best;
    }
  }
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, arg = std::move(arg), cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < arg.size(); ++i) ga[arg[i] * cols + static_cast<int64_t>(i) % cols] += g[i];
  });
}

Var expand_segments(const Var& a, const Offsets& offsets) {
  require_rank(a, 2, "expand_segments");
  const int64_t cols = a.dim(1);
  const auto segs = static_cast<int64_t>(offsets.size()) - 1;
  if (segs != a.dim(0)) throw std::invalid_argument("expand_segments: segment count mismatch");
  check_offsets(offsets, offsets.back(), "expand_segments");
  Tensor out(Shape{offsets.back(), cols});
  for (int64_t s = 0; s < segs; ++s)
    for (int64_t r = offsets[static_cast<size_t>(s)]; r < offsets[static_cast<size_t>(s) + 1]; ++r)
      for (int64_t c = 0; c < cols; ++c) out.at(r, c) = a.value().at(s, c);
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, offsets, segs, cols](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t s = 0; s < segs; ++s)
        for (int64_t r = offsets[static_cast<size_t>(s)]; r < offsets[static_cast<size_t>(s) + 1]; ++r)
          for (int64_t c = 0; c < cols; ++c) ga[s * cols + c] += g.at(r, c);
  });
}

Var repeat_cols(const Var& a, int64_t times) {
  require_rank(a, 2, "repeat_cols");
  const int64_t rows = a.dim(0), k = a.dim(1);
  Tensor out(Shape{rows, k * times});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < k; ++j)
      for (int64_t t = 0; t < times; ++t) out.at(r, j * times + t) = a.value().at(r, j);
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, rows, k, times](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < k; ++j)
          for (int64_t t = 0; t < times; ++t) ga[r * k + j] += g.at(r, j * times + t);
  });
}

Var pair_difference(const Var& x, const Var& y, std::span<const int64_t> ix, std::span<const int64_t> iy) {
  require_rank(x, 2, "pair_difference");
  require_rank(y, 2, "pair_difference");
  const int64_t d = x.dim(1);
  if (y.dim(1) != d || ix.size() != iy.size()) throw std::invalid_argument("pair_difference: shape mismatch");
  for (size_t p = 0; p < ix.size(); ++p) {
    if (ix[p] < 0 || ix[p] >= x.dim(0) || iy[p] < 0 || iy[p] >= y.dim(0))
      throw std::out_of_range("pair_difference: index out of range");
  }
  Tensor out(Shape{static_cast<int64_t>(ix.size()), d});
  kernels::pair_difference(d, x.value().data(), y.value().data(), ix, iy, out.data());
  std::vector<int64_t> vx(ix.begin(), ix.end()), vy(iy.begin(), iy.end());
  NodePtr px = x.node(), py = y.node();
  return make_op(std::move(out), {x, y}, [px, py, vx = std::move(vx), vy = std::move(vy), d](const Tensor& g) {
    double* gx = grad_of(px);
    double* gy = grad_of(py);
    for (size_t p = 0; p < vx.size(); ++p) {
      const double* gr = g.data() + static_cast<int64_t>(p) * d;
      if (gx)
        for (int64_t c = 0; c < d; ++c) gx[vx[p] * d + c] += gr[c];
      if (gy)
        for (int64_t c = 0; c < d; ++c) gy[vy[p] * d + c] -= gr[c];
    }
  });
}

Var l2_normalize_rows(const Var& a) {
  require_rank(a, 2, "l2_normalize_rows");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor out(a.shape());
  std::vector<double> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += a.value().at(r, c) * a.value().at(r, c);
    const double n = std::sqrt(s);
    norms[static_cast<size_t>(r)] = n;
    if (n > 0.0)
      for (int64_t c = 0; c < cols; ++c) out.at(r, c) = a.value().at(r, c) / n;
  }
  NodePtr pa = a.node();
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    detail::Node* self = res.node().get();
    res.node()->backward = [pa, self, norms = std::move(norms), rows, cols](const Tensor& g) {
      double* ga = grad_of(pa);
      for (int64_t r = 0; r < rows; ++r) {
        const double n = norms[static_cast<size_t>(r)];
        if (n <= 0.0) continue;
        double dot = 0.0;
        for (int64_t c = 0; c < cols; ++c) dot += g.at(r, c) * self->value.at(r, c);
        for (int64_t c = 0; c < cols; ++c) ga[r * cols + c] += (g.at(r, c) - dot * self->value.at(r, c)) / n;
      }
    };
  }
  return res;
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride, int64_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: weight shape mismatch");
  kernels::ConvGeometry geo;
  geo.batch = x.dim(0);
  geo.in_channels = x.dim(1);
  geo.in_h = x.dim(2);
  geo.in_w = x.dim(3);
  geo.out_channels = w.dim(0);
  geo.kernel = w.dim(2);
  geo.stride = stride;
  geo.pad = pad;
  if (bias.value().size() != static_cast<size_t>(geo.out_channels)) throw std::invalid_argument("conv2d: bias size");
  Tensor out(Shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
  kernels::conv2d_forward(geo, x.value().data(), w.value().data(), bias.value().data(), out.data());
  NodePtr px = x.node(), pw = w.node(), pb = bias.node();
  return make_op(std::move(out), {x, w, bias}, [px, pw, pb, geo](const Tensor& g) {
    kernels::conv2d_backward(geo, px->value.data(), pw->value.data(), g.data(), grad_of(px), grad_of(pw),
                             grad_of(pb));
  });
}

Var nchw_to_rows(const Var& x) {
  require_rank(x, 4, "nchw_to_rows");
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{b * hw, c});
  for (int64_t s = 0; s < b; ++s)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) out.at(s * hw + p, ch) = x.value()[static_cast<size_t>((s * c + ch) * hw + p)];
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, b, c, hw](const Tensor& g) {
    if (double* gx = grad_of(px))
      for (int64_t s = 0; s < b; ++s)
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t p = 0; p < hw; ++p) gx[(s * c + ch) * hw + p] += g.at(s * hw + p, ch);
  });
}

Var rows_to_nchw(const Var& rows, int64_t batch, int64_t channels, int64_t h, int64_t w) {
  require_rank(rows, 2, "rows_to_nchw");
  const int64_t hw = h * w;
  if (rows.dim(0) != batch * hw || rows.dim(1) != channels) throw std::invalid_argument("rows_to_nchw: shape");
  Tensor out(Shape{batch, channels, h, w});
  for (int64_t s = 0; s < batch; ++s)
    for (int64_t ch = 0; ch < channels; ++ch)
      for (int64_t p = 0; p < hw; ++p)
        out[static_cast<size_t>((s * channels + ch) * hw + p)] = rows.value().at(s * hw + p, ch);
  NodePtr pr = rows.node();
  return make_op(std::move(out), {rows}, [pr, batch, channels, hw](const Tensor& g) {
    if (double* gr = grad_of(pr))
      for (int64_t s = 0; s < batch; ++s)
        for (int64_t ch = 0; ch < channels; ++ch)
          for (int64_t p = 0; p < hw; ++p)
            gr[(s * hw + p) * channels + ch] += g[static_cast<size_t>((s * channels + ch) * hw + p)];
  });
}

Var embedding(const Var& table, std::span<const int64_t> ids, int64_t padding_id) {
  require_rank(table, 2, "embedding");
  const int64_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int64_t> idx(ids.begin(), ids.end());
  Tensor out(Shape{static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(idx[i]) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy(table.value().data() + idx[i] * d, table.value().data() + (idx[i] + 1) * d,
              out.data() + static_cast<int64_t>(i) * d);
  }
  NodePtr pt = table.node();
  return make_op(std::move(out), {table}, [pt, idx = std::move(idx), d, padding_id](const Tensor& g) {
    if (double* gt = grad_of(pt))
      for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] == padding_id) continue;
        for (int64_t c = 0; c < d; ++c) gt[idx[i] * d + c] += g[i * static_cast<size_t>(d) + static_cast<size_t>(c)];
      }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, NormMode mode) {
  require_rank(x, 2, "batch_norm");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (gamma.value().size() != static_cast<size_t>(cols) || beta.value().size() != static_cast<size_t>(cols) ||
      state.running_mean.size() != static_cast<size_t>(cols)) {
    throw std::invalid_argument("batch_norm: feature count mismatch");
  }
  std::vector<double> mean(static_cast<size_t>(cols)), invstd(static_cast<size_t>(cols));
  const bool batch_stats = mode == NormMode::kBatch;
  if (batch_stats) {
    if (rows == 0) throw std::invalid_argument("batch_norm: empty batch");
    for (int64_t c = 0; c < cols; ++c) {
      double m = 0.0;
      for (int64_t r = 0; r < rows; ++r) m += x.value().at(r, c);
      m /= static_cast<double>(rows);
      double v = 0.0;
      for (int64_t r = 0; r < rows; ++r) {
        const double dlt = x.value().at(r, c) - m;
        v += dlt * dlt;
      }
      v /= static_cast<double>(rows);
      mean[static_cast<size_t>(c)] = m;
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = rows > 1 ? v * static_cast<double>(rows) / static_cast<double>(rows - 1) : v;
      state.running_mean[static_cast<size_t>(c)] =
          (1.0 - state.momentum) * state.running_mean[static_cast<size_t>(c)] + state.momentum * m;
      state.running_var[static_cast<size_t>(c)] =
          (1.0 - state.momentum) * state.running_var[static_cast<size_t>(c)] + state.momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < cols; ++c) {
      mean[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(state.running_var[static_cast<size_t>(c)] + state.eps);
    }
  }
  Tensor xhat(x.shape());
  Tensor out(x.shape());
#pragma omp parallel for schedule(static) if (rows * cols > (1 << 15))
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      const double h = (x.value().at(r, c) - mean[static_cast<size_t>(c)]) * invstd[static_cast<size_t>(c)];
      xhat.at(r, c) = h;
      out.at(r, c) = gamma.value()[static_cast<size_t>(c)] * h + beta.value()[static_cast<size_t>(c)];
    }
  NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta},
                 [px, pg, pb, xhat = std::move(xhat), invstd = std::move(invstd), rows, cols,
                  batch_stats](const Tensor& g) {
                   std::vector<double> sum_g(static_cast<size_t>(cols), 0.0), sum_gx(static_cast<size_t>(cols), 0.0);
                   for (int64_t r = 0; r < rows; ++r)
                     for (int64_t c = 0; c < cols; ++c) {
                       sum_g[static_cast<size_t>(c)] += g.at(r, c);
                       sum_gx[static_cast<size_t>(c)] += g.at(r, c) * xhat.at(r, c);
                     }
                   if (double* gg = grad_of(pg))
                     for (int64_t c = 0; c < cols; ++c) gg[c] += sum_gx[static_cast<size_t>(c)];
                   if (double* gb = grad_of(pb))
                     for (int64_t c = 0; c < cols; ++c) gb[c] += sum_g[static_cast<size_t>(c)];
                   if (double* gx = grad_of(px)) {
                     const double inv_n = 1.0 / static_cast<double>(rows);
                     for (int64_t r = 0; r < rows; ++r)
                       for (int64_t c = 0; c < cols; ++c) {
                         const auto cc = static_cast<size_t>(c);
                         const double scale = pg->value[cc] * invstd[cc];
                         if (batch_stats) {
                           gx[r * cols + c] +=
                               scale * (g.at(r, c) - inv_n * sum_g[cc] - xhat.at(r, c) * inv_n * sum_gx[cc]);
                         } else {
                           gx[r * cols + c] += scale * g.at(r, c);
                         }
                       }
                   }
                 });
}

Var instance_norm(const Var& x, int64_t segment_rows, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "instance_norm");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (segment_rows <= 0 || rows % segment_rows != 0) throw std::invalid_argument("instance_norm: bad segment size");
  if (gamma.value().size() != static_cast<size_t>(cols) || beta.value().size() != static_cast<size_t>(cols))
    throw std::invalid_argument("instance_norm: affine size mismatch");
  const int64_t segs = rows / segment_rows;
  Tensor xhat(x.shape()), out(x.shape());
  Tensor invstd(Shape{segs, cols});
  for (int64_t s = 0; s < segs; ++s)
    for (int64_t c = 0; c < cols; ++c) {
      double m = 0.0;
      for (int64_t r = 0; r < segment_rows; ++r) m += x.value().at(s * segment_rows + r, c);
      m /= static_cast<double>(segment_rows);
      double v = 0.0;
      for (int64_t r = 0; r < segment_rows; ++r) {
        const double dlt = x.value().at(s * segment_rows + r, c) - m;
        v += dlt * dlt;
      }
      v /= static_cast<double>(segment_rows);
      const double is = 1.0 / std::sqrt(v + eps);
      invstd.at(s, c) = is;
      for (int64_t r = 0; r < segment_rows; ++r) {
        const int64_t row = s * segment_rows + r;
        const double h = (x.value().at(row, c) - m) * is;
        xhat.at(row, c) = h;
        out.at(row, c) = gamma.value()[static_cast<size_t>(c)] * h + beta.value()[static_cast<size_t>(c)];
      }
    }
  NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta},
                 [px, pg, pb, xhat = std::move(xhat), invstd = std::move(invstd), segs, segment_rows,
                  cols](const Tensor& g) {
                   double* gx = grad_of(px);
                   double* gg = grad_of(pg);
                   double* gb = grad_of(pb);
                   const double inv_n = 1.0 / static_cast<double>(segment_rows);
                   for (int64_t s = 0; s < segs; ++s)
                     for (int64_t c = 0; c < cols; ++c) {
                       double sg = 0.0, sgx = 0.0;
                       for (int64_t r = 0; r < segment_rows; ++r) {
                         const int64_t row = s * segment_rows + r;
                         sg += g.at(row, c);
                         sgx += g.at(row, c) * xhat.at(row, c);
                       }
                       if (gg) gg[c] += sgx;
                       if (gb) gb[c] += sg;
                       if (gx) {
                         const double scale = pg->value[static_cast<size_t>(c)] * invstd.at(s, c);
                         for (int64_t r = 0; r < segment_rows; ++r) {
                           const int64_t row = s * segment_rows + r;
                           gx[row * cols + c] +=
                               scale * (g.at(row, c) - inv_n * sg - xhat.at(row, c) * inv_n * sgx);
                         }
                       }
                     }
                 });
}

Var cosine_matrix(const Var& a, const Var& b) {
  require_rank(a, 2, "cosine_matrix");
  require_rank(b, 2, "cosine_matrix");
  const int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) throw std::invalid_argument("cosine_matrix: width mismatch");
  auto norms = [d](const Tensor& t, int64_t rows) {
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
      out[static_cast<size_t>(r)] = std::sqrt(s);
    }
    return out;
  };
  std::vector<double> na = norms(a.value(), n), nb = norms(b.value(), m);
  Tensor dots(Shape{n, m});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, n, m, d, a.value().data(), b.value().data(), dots.data(),
                false);
  Tensor out(Shape{n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      const double den = na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)];
      out.at(i, j) = den > 0.0 ? dots.at(i, j) / den : 0.0;
    }
  NodePtr pa = a.node(), pb = b.node();
  Var res = make_op(std::move(out), {a, b}, nullptr);
  if (res.requires_grad()) {
    detail::Node* self = res.node().get();
    res.node()->backward = [pa, pb, self, na = std::move(na), nb = std::move(nb), n, m, d](const Tensor& g) {
      double* ga = grad_of(pa);
      double* gb = grad_of(pb);
      const Tensor& av = pa->value;
      const Tensor& bv = pb->value;
      for (int64_t i = 0; i < n; ++i) {
        const double ni = na[static_cast<size_t>(i)];
        if (ni <= 0.0) continue;
        for (int64_t j = 0; j < m; ++j) {
          const double nj = nb[static_cast<size_t>(j)];
          if (nj <= 0.0) continue;
          const double gij = g.at(i, j);
          if (gij == 0.0) continue;
          const double s = self->value.at(i, j);
          const double inv = 1.0 / (ni * nj);
          if (ga)
            for (int64_t c = 0; c < d; ++c) ga[i * d + c] += gij * (bv.at(j, c) * inv - s * av.at(i, c) / (ni * ni));
          if (gb)
            for (int64_t c = 0; c < d; ++c) gb[j * d + c] += gij * (av.at(i, c) * inv - s * bv.at(j, c) / (nj * nj));
        }
      }
    };
  }
  return res;
}

Var cosine_rows(const Var& a, const Var& b) {
  require_same(a, b, "cosine_rows");
  require_rank(a, 2, "cosine_rows");
  const int64_t n = a.dim(0), d = a.dim(1);
  std::vector<double> na(static_cast<size_t>(n)), nb(static_cast<size_t>(n));
  Tensor out(Shape{n});
  for (int64_t i = 0; i < n; ++i) {
    double sa = 0.0, sb = 0.0, dot = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      sa += a.value().at(i, c) * a.value().at(i, c);
      sb += b.value().at(i, c) * b.value().at(i, c);
      dot += a.value().at(i, c) * b.value().at(i, c);
    }
    na[static_cast<size_t>(i)] = std::sqrt(sa);
    nb[static_cast<size_t>(i)] = std::sqrt(sb);
    const double den = na[static_cast<size_t>(i)] * nb[static_cast<size_t>(i)];
    out[static_cast<size_t>(i)] = den > 0.0 ? dot / den : 0.0;
  }
  NodePtr pa = a.node(), pb = b.node();
  Var res = make_op(std::move(out), {a, b}, nullptr);
  if (res.requires_grad()) {
    detail::Node* self = res.node().get();
    res.node()->backward = [pa, pb, self, na = std::move(na), nb = std::move(nb), n, d](const Tensor& g) {
      double* ga = grad_of(pa);
      double* gb = grad_of(pb);
      for (int64_t i = 0; i < n; ++i) {
        const double ni = na[static_cast<size_t>(i)], nj = nb[static_cast<size_t>(i)];
        if (ni <= 0.0 || nj <= 0.0) continue;
        const double gi = g[static_cast<size_t>(i)], s = self->value[static_cast<size_t>(i)];
        for (int64_t c = 0; c < d; ++c) {
          const double av = pa->value.at(i, c), bv = pb->value.at(i, c);
          if (ga) ga[i * d + c] += gi * (bv / (ni * nj) - s * av / (ni * ni));
          if (gb) gb[i * d + c] += gi * (av / (ni * nj) - s * bv / (nj * nj));
        }
      }
    };
  }
  return res;
}

Var sum(const Var& a) {
  Tensor out(Shape{1}, a.value().sum());
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa](const Tensor& g) {
    if (double* ga = grad_of(pa))
      for (size_t i = 0; i < pa->value.size(); ++i) ga[i] += g[0];
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var cross_entropy(const Var& logits, std::span<const int64_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const int64_t n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  Tensor probs(logits.shape());
  double total = 0.0;
  std::vector<int64_t> lab(labels.begin(), labels.end());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t y = lab[static_cast<size_t>(i)];
    if (y < 0 || y >= classes) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
    double mx = logits.value().at(i, 0);
    for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, logits.value().at(i, c));
    double z = 0.0;
    for (int64_t c = 0; c < classes; ++c) z += std::exp(logits.value().at(i, c) - mx);
    for (int64_t c = 0; c < classes; ++c) probs.at(i, c) = std::exp(logits.value().at(i, c) - mx) / z;
    total += (mx + std::log(z)) - logits.value().at(i, y);
  }
  Tensor out(Shape{1}, total / static_cast<double>(n));
  NodePtr pl = logits.node();
  return make_op(std::move(out), {logits},
                 [pl, probs = std::move(probs), lab = std::move(lab), n, classes](const Tensor& g) {
                   if (double* gl = grad_of(pl)) {
                     const double s = g[0] / static_cast<double>(n);
                     for (int64_t i = 0; i < n; ++i)
                       for (int64_t c = 0; c < classes; ++c) {
                         const double t = c == lab[static_cast<size_t>(i)] ? 1.0 : 0.0;
                         gl[i * classes + c] += s * (probs.at(i, c) - t);
                       }
                   }
                 });
}

}  // namespace ag
}  // namespace manet
