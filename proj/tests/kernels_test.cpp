// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <vector>

#include "doctest.h"
#include "manetlab/kernels.hpp"
#include "test_util.hpp"

using namespace manet;
using kernels::Trans;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct ThreadScope {
  int saved = kernels::max_threads();
  explicit ThreadScope(int n) { kernels::set_threads(n); }
  ~ThreadScope() { kernels::set_threads(saved); }
};

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm matches the naive reference for every transpose combination") {
    ThreadScope threads(4);
    std::mt19937_64 rng(3);
    for (Trans ta : {Trans::kNo, Trans::kYes})
      for (Trans tb : {Trans::kNo, Trans::kYes})
        for (bool acc : {false, true}) {
          const int64_t m = 37, n = 129, k = 65;
          auto a = random_vec(static_cast<size_t>(m * k), rng);
          auto b = random_vec(static_cast<size_t>(k * n), rng);
          auto c0 = random_vec(static_cast<size_t>(m * n), rng);
          auto c1 = c0;
          kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c0.data(), acc);
          kernels::serial::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
          CHECK(max_diff(c0, c1) < 1e-12);
        }
  }

  TEST_CASE("gemm of a 2x2 product by hand") {
    const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
    double c[4] = {};
    kernels::gemm(Trans::kNo, Trans::kNo, 2, 2, 2, a, b, c, false);
    CHECK(c[0] == 19);
    CHECK(c[1] == 22);
    CHECK(c[2] == 43);
    CHECK(c[3] == 50);
  }

  TEST_CASE("conv2d forward and backward match the direct convolution") {
    ThreadScope threads(4);
    std::mt19937_64 rng(5);
    for (int64_t stride : {1, 2}) {
      kernels::ConvGeometry g{3, 4, 11, 7, 5, 3, stride, 1};
      const size_t xs = static_cast<size_t>(g.batch * g.in_channels * g.in_h * g.in_w);
      const size_t ws = static_cast<size_t>(g.out_channels * g.patch());
      const size_t os = static_cast<size_t>(g.batch * g.out_channels * g.out_h() * g.out_w());
      auto x = random_vec(xs, rng), w = random_vec(ws, rng), bias = random_vec(static_cast<size_t>(g.out_channels), rng);
      std::vector<double> o0(os), o1(os);
      kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), o0.data());
      kernels::serial::conv2d_forward(g, x.data(), w.data(), bias.data(), o1.data());
      CHECK(max_diff(o0, o1) < 1e-12);

      auto dout = random_vec(os, rng);
      std::vector<double> dx0(xs), dx1(xs), dw0(ws), dw1(ws), db0(bias.size()), db1(bias.size());
      kernels::conv2d_backward(g, x.data(), w.data(), dout.data(), dx0.data(), dw0.data(), db0.data());
      kernels::serial::conv2d_backward(g, x.data(), w.data(), dout.data(), dx1.data(), dw1.data(), db1.data());
      CHECK(max_diff(dx0, dx1) < 1e-12);
      CHECK(max_diff(dw0, dw1) < 1e-12);
      CHECK(max_diff(db0, db1) < 1e-12);
    }
  }

  TEST_CASE("parallel conv results do not depend on the thread count") {
    std::mt19937_64 rng(6);
    kernels::ConvGeometry g{4, 3, 16, 8, 6, 3, 2, 1};
    const size_t xs = static_cast<size_t>(g.batch * g.in_channels * g.in_h * g.in_w);
    const size_t ws = static_cast<size_t>(g.out_channels * g.patch());
    const size_t os = static_cast<size_t>(g.batch * g.out_channels * g.out_h() * g.out_w());
    auto x = random_vec(xs, rng), w = random_vec(ws, rng), dout = random_vec(os, rng);
    std::vector<double> dw1(ws), dw4(ws), dx(xs), db(6);
    {
      ThreadScope t(1);
      kernels::conv2d_backward(g, x.data(), w.data(), dout.data(), dx.data(), dw1.data(), db.data());
    }
    {
      ThreadScope t(4);
      std::fill(dx.begin(), dx.end(), 0.0);
      std::fill(db.begin(), db.end(), 0.0);
      kernels::conv2d_backward(g, x.data(), w.data(), dout.data(), dx.data(), dw4.data(), db.data());
    }
    CHECK(dw1 == dw4);
  }

  TEST_CASE("pair_difference matches the reference") {
    ThreadScope threads(4);
    std::mt19937_64 rng(8);
    const int64_t d = 9, nx = 40, ny = 30;
    auto x = random_vec(static_cast<size_t>(nx * d), rng), y = random_vec(static_cast<size_t>(ny * d), rng);
    std::vector<int64_t> ix, iy;
    for (int64_t i = 0; i < nx; ++i)
      for (int64_t j = 0; j < ny; ++j) {
        ix.push_back(i);
        iy.push_back(j);
      }
    std::vector<double> o0(ix.size() * d), o1(ix.size() * d);
    kernels::pair_difference(d, x.data(), y.data(), ix, iy, o0.data());
    kernels::serial::pair_difference(d, x.data(), y.data(), ix, iy, o1.data());
    CHECK(o0 == o1);
    CHECK(o0[static_cast<size_t>((3 * ny + 2) * d + 4)] == doctest::Approx(x[3 * d + 4] - y[2 * d + 4]));
  }
}
