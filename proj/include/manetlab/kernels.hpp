// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hot loops of the model. Each kernel exists twice: an OpenMP version used by
// the autograd ops, and a plain serial reference in kernels::serial that the
// tests and the benchmark compare against. Parallel versions partition the
// output, so results do not depend on the thread count.

#pragma once

#include <cstdint>
#include <span>

namespace manet::kernels {

enum class Trans { kNo, kYes };

struct ConvGeometry {
  int64_t batch = 0;
  int64_t in_channels = 0;
  int64_t in_h = 0;
  int64_t in_w = 0;
  int64_t out_channels = 0;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t pad = 1;

  int64_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int64_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int64_t patch() const { return in_channels * kernel * kernel; }
};

// C[m,n] = op(A) op(B) (+ C when accumulate). op(A) is [m,k], op(B) is [k,n].
void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool accumulate);

// x: [B,Cin,H,W], w: [Cout,Cin,k,k], bias: [Cout] -> out: [B,Cout,Ho,Wo].
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* out);

// Accumulates into dx, dw, dbias (any may be null).
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx,
                     double* dw, double* dbias);

// out[p,:] = x[ix[p],:] - y[iy[p],:] for rows of width d.
void pair_difference(int64_t d, const double* x, const double* y, std::span<const int64_t> ix,
                     std::span<const int64_t> iy, double* out);

int max_threads();
void set_threads(int n);

namespace serial {

void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool accumulate);
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* out);
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx,
                     double* dw, double* dbias);
void pair_difference(int64_t d, const double* x, const double* y, std::span<const int64_t> ix,
                     std::span<const int64_t> iy, double* out);

}  // namespace serial
}  // namespace manet::kernels
