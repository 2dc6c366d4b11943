// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace manet::kernels {
namespace {

constexpr int64_t kParallelWork = 1 << 14;

// Row i of C for each layout. Shared by the parallel and blocked paths so
// both produce identical bits.
inline void gemm_row(Trans ta, Trans tb, int64_t i, int64_t m, int64_t n, int64_t k, const double* a,
                     const double* b, double* crow) {
  if (tb == Trans::kNo) {
    for (int64_t p = 0; p < k; ++p) {
      const double av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (int64_t j = 0; j < n; ++j) {
      const double* bcol = b + j * k;
      double s = 0.0;
      if (ta == Trans::kNo) {
        const double* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) s += arow[p] * bcol[p];
      } else {
        for (int64_t p = 0; p < k; ++p) s += a[p * m + i] * bcol[p];
      }
      crow[j] += s;
    }
  }
}

void im2col(const ConvGeometry& g, const double* x, double* col) {
  const int64_t ho = g.out_h(), wo = g.out_w();
  for (int64_t c = 0; c < g.in_channels; ++c) {
    for (int64_t ky = 0; ky < g.kernel; ++ky) {
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        double* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            const bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
            dst[oy * wo + ox] = inside ? x[(c * g.in_h + iy) * g.in_w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  const int64_t ho = g.out_h(), wo = g.out_w();
  for (int64_t c = 0; c < g.in_channels; ++c) {
    for (int64_t ky = 0; ky < g.kernel; ++ky) {
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        const double* src = col + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            dx[(c * g.in_h + iy) * g.in_w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

void conv_sample_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* out,
                         std::vector<double>& col) {
  const int64_t hw = g.out_h() * g.out_w();
  col.resize(static_cast<size_t>(g.patch() * hw));
  im2col(g, x, col.data());
  for (int64_t o = 0; o < g.out_channels; ++o) {
    double* orow = out + o * hw;
    std::fill(orow, orow + hw, bias ? bias[o] : 0.0);
    gemm_row(Trans::kNo, Trans::kNo, o, g.out_channels, hw, g.patch(), w, col.data(), orow);
  }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (int64_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, a, b, c + i * n);
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* out) {
  const int64_t in_sz = g.in_channels * g.in_h * g.in_w;
  const int64_t out_sz = g.out_channels * g.out_h() * g.out_w();
#pragma omp parallel
  {
    std::vector<double> col;
#pragma omp for schedule(static)
    for (int64_t b = 0; b < g.batch; ++b) conv_sample_forward(g, x + b * in_sz, w, bias, out + b * out_sz, col);
  }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx,
                     double* dw, double* dbias) {
  const int64_t in_sz = g.in_channels * g.in_h * g.in_w;
  const int64_t hw = g.out_h() * g.out_w();
  const int64_t out_sz = g.out_channels * hw;
  const int64_t wsz = g.out_channels * g.patch();
  // Per-sample weight gradients, reduced afterwards in sample order.
  std::vector<double> dw_per(dw ? static_cast<size_t>(g.batch * wsz) : 0, 0.0);
#pragma omp parallel
  {
    std::vector<double> col(static_cast<size_t>(g.patch() * hw));
    std::vector<double> dcol(static_cast<size_t>(g.patch() * hw));
#pragma omp for schedule(static)
    for (int64_t b = 0; b < g.batch; ++b) {
      const double* go = dout + b * out_sz;
      if (dw) {
        im2col(g, x + b * in_sz, col.data());
        double* dwb = dw_per.data() + b * wsz;
        for (int64_t o = 0; o < g.out_channels; ++o)
          gemm_row(Trans::kNo, Trans::kYes, o, g.out_channels, g.patch(), hw, go, col.data(), dwb + o * g.patch());
      }
      if (dx) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        for (int64_t p = 0; p < g.patch(); ++p)
          gemm_row(Trans::kYes, Trans::kNo, p, g.patch(), hw, g.out_channels, w, go, dcol.data() + p * hw);
        col2im_add(g, dcol.data(), dx + b * in_sz);
      }
    }
  }
  if (dw) {
    for (int64_t b = 0; b < g.batch; ++b) {
      const double* src = dw_per.data() + b * wsz;
      for (int64_t i = 0; i < wsz; ++i) dw[i] += src[i];
    }
  }
  if (dbias) {
    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t o = 0; o < g.out_channels; ++o) {
        const double* go = dout + b * out_sz + o * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += go[i];
        dbias[o] += s;
      }
  }
}

void pair_difference(int64_t d, const double* x, const double* y, std::span<const int64_t> ix,
                     std::span<const int64_t> iy, double* out) {
  const auto count = static_cast<int64_t>(ix.size());
#pragma omp parallel for schedule(static) if (count * d > kParallelWork)
  for (int64_t p = 0; p < count; ++p) {
    const double* xr = x + ix[static_cast<size_t>(p)] * d;
    const double* yr = y + iy[static_cast<size_t>(p)] * d;
    double* o = out + p * d;
    for (int64_t c = 0; c < d; ++c) o[c] = xr[c] - yr[c];
  }
}

namespace serial {

void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const double av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

// Direct convolution, no im2col.
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias, double* out) {
  const int64_t ho = g.out_h(), wo = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t o = 0; o < g.out_channels; ++o)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double s = bias ? bias[o] : 0.0;
          for (int64_t c = 0; c < g.in_channels; ++c)
            for (int64_t ky = 0; ky < g.kernel; ++ky)
              for (int64_t kx = 0; kx < g.kernel; ++kx) {
                const int64_t iy = oy * g.stride - g.pad + ky;
                const int64_t ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                s += w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] *
                     x[((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
          out[((b * g.out_channels + o) * ho + oy) * wo + ox] = s;
        }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dout, double* dx,
                     double* dw, double* dbias) {
  const int64_t ho = g.out_h(), wo = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t o = 0; o < g.out_channels; ++o)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          const double go = dout[((b * g.out_channels + o) * ho + oy) * wo + ox];
          if (dbias) dbias[o] += go;
          for (int64_t c = 0; c < g.in_channels; ++c)
            for (int64_t ky = 0; ky < g.kernel; ++ky)
              for (int64_t kx = 0; kx < g.kernel; ++kx) {
                const int64_t iy = oy * g.stride - g.pad + ky;
                const int64_t ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const int64_t wi = ((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
                const int64_t xi = ((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix;
                if (dw) dw[wi] += go * x[xi];
                if (dx) dx[xi] += go * w[wi];
              }
        }
}

void pair_difference(int64_t d, const double* x, const double* y, std::span<const int64_t> ix,
                     std::span<const int64_t> iy, double* out) {
  for (size_t p = 0; p < ix.size(); ++p)
    for (int64_t c = 0; c < d; ++c) out[static_cast<int64_t>(p) * d + c] = x[ix[p] * d + c] - y[iy[p] * d + c];
}

}  // namespace serial
}  // namespace manet::kernels
