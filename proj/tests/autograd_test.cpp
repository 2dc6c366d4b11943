// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "manetlab/autograd.hpp"
#include "manetlab/gradcheck.hpp"
#include "test_util.hpp"

using namespace manet;
using testutil::leaf;

namespace {

void expect_grad_ok(const std::string& name, const std::function<Var()>& f,
                    const std::vector<std::pair<std::string, Var>>& inputs) {
  const GradCheckResult r = gradcheck(name, f, inputs);
  INFO(name << " worst " << r.worst_input << " rel " << r.max_relative_error);
  CHECK(r.max_relative_error < 1e-6);
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("elementwise ops") {
    std::mt19937_64 rng(1);
    Var a = leaf({3, 4}, rng), b = leaf({3, 4}, rng);
    expect_grad_ok("add", [&] { return project_output(ag::add(a, b), 1); }, {{"a", a}, {"b", b}});
    expect_grad_ok("sub", [&] { return project_output(ag::sub(a, b), 2); }, {{"a", a}, {"b", b}});
    expect_grad_ok("mul", [&] { return project_output(ag::mul(a, b), 3); }, {{"a", a}, {"b", b}});
    expect_grad_ok("scale", [&] { return project_output(ag::add_scalar(ag::scale(a, -2.5), 1.0), 4); },
                   {{"a", a}});
    expect_grad_ok("sigmoid", [&] { return project_output(ag::sigmoid(a), 5); }, {{"a", a}});
    expect_grad_ok("tanh", [&] { return project_output(ag::tanh(a), 6); }, {{"a", a}});
    expect_grad_ok("one_minus", [&] { return project_output(ag::one_minus(a), 7); }, {{"a", a}});
    expect_grad_ok("relu", [&] { return project_output(ag::relu(a), 8); }, {{"a", a}});
  }

  TEST_CASE("row broadcasts, matmul, linear") {
    std::mt19937_64 rng(2);
    Var a = leaf({4, 3}, rng), v = leaf({3}, rng), b = leaf({3, 5}, rng), bt = leaf({5, 3}, rng);
    expect_grad_ok("add_row", [&] { return project_output(ag::add_row(a, v), 1); }, {{"a", a}, {"v", v}});
    expect_grad_ok("mul_row", [&] { return project_output(ag::mul_row(a, v), 2); }, {{"a", a}, {"v", v}});
    expect_grad_ok("matmul", [&] { return project_output(ag::matmul(a, b), 3); }, {{"a", a}, {"b", b}});
    expect_grad_ok("matmul_tt", [&] { return project_output(ag::matmul(b, a, true, true), 4); },
                   {{"a", a}, {"b", b}});
    expect_grad_ok("linear", [&] { return project_output(ag::linear(a, bt), 5); }, {{"a", a}, {"w", bt}});
  }

  TEST_CASE("matmul value by hand") {
    Var a(Tensor({2, 2}, {1, 2, 3, 4})), b(Tensor({2, 2}, {5, 6, 7, 8}));
    const Tensor c = ag::matmul(a, b).value();
    CHECK(c.at(0, 0) == 19);
    CHECK(c.at(1, 1) == 50);
    const Tensor l = ag::linear(a, b).value();  // a * b^T
    CHECK(l.at(0, 1) == 1 * 7 + 2 * 8);
  }

  TEST_CASE("shape ops") {
    std::mt19937_64 rng(3);
    Var a = leaf({5, 4}, rng), b = leaf({5, 2}, rng), c = leaf({2, 4}, rng);
    std::vector<Var> cols{a, b}, rows{a, c};
    expect_grad_ok("concat_cols", [&] { return project_output(ag::concat_cols(cols), 1); }, {{"a", a}, {"b", b}});
    expect_grad_ok("concat_rows", [&] { return project_output(ag::concat_rows(rows), 2); }, {{"a", a}, {"c", c}});
    expect_grad_ok("slice_cols", [&] { return project_output(ag::slice_cols(a, 1, 2), 3); }, {{"a", a}});
    expect_grad_ok("slice_rows", [&] { return project_output(ag::slice_rows(a, 2, 3), 4); }, {{"a", a}});
    const std::vector<int64_t> idx{4, 0, 4, 2};
    expect_grad_ok("gather_rows", [&] { return project_output(ag::gather_rows(a, idx), 5); }, {{"a", a}});
    const std::vector<std::pair<int64_t, int64_t>> cells{{0, 0}, {4, 3}, {0, 0}};
    expect_grad_ok("pick", [&] { return project_output(ag::pick(a, cells), 6); }, {{"a", a}});
    expect_grad_ok("reshape", [&] { return project_output(ag::reshape(a, {2, 10}), 7); }, {{"a", a}});
    expect_grad_ok("repeat_cols", [&] { return project_output(ag::repeat_cols(b, 3), 8); }, {{"b", b}});
  }

  TEST_CASE("segment ops") {
    std::mt19937_64 rng(4);
    Var a = leaf({7, 3}, rng);
    const Offsets off{0, 2, 3, 7};
    expect_grad_ok("segment_sum", [&] { return project_output(ag::segment_sum(a, off), 1); }, {{"a", a}});
    expect_grad_ok("segment_mean", [&] { return project_output(ag::segment_mean(a, off), 2); }, {{"a", a}});
    expect_grad_ok("segment_max", [&] { return project_output(ag::segment_max(a, off), 3); }, {{"a", a}});
    Var s = leaf({3, 3}, rng);
    expect_grad_ok("expand_segments", [&] { return project_output(ag::expand_segments(s, off), 4); }, {{"s", s}});
  }

  TEST_CASE("segment_max sends gradient to the first of tied rows") {
    Var a(Tensor({3, 1}, {2.0, 2.0, 1.0}), true);
    ag::sum(ag::segment_max(a, {0, 3})).backward();
    const Tensor g = a.grad();
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
  }

  TEST_CASE("pair_difference and l2 normalization") {
    std::mt19937_64 rng(5);
    Var x = leaf({4, 3}, rng), y = leaf({3, 3}, rng);
    const std::vector<int64_t> ix{0, 1, 3, 3}, iy{2, 2, 0, 1};
    expect_grad_ok("pair_difference", [&] { return project_output(ag::pair_difference(x, y, ix, iy), 1); },
                   {{"x", x}, {"y", y}});
    expect_grad_ok("l2_normalize_rows", [&] { return project_output(ag::l2_normalize_rows(x), 2); }, {{"x", x}});
  }

  TEST_CASE("l2 normalization leaves zero rows at zero") {
    Var z(Tensor({2, 3}, {0, 0, 0, 3, 4, 0}), true);
    Var n = ag::l2_normalize_rows(z);
    CHECK(n.value().at(0, 0) == 0.0);
    CHECK(n.value().at(1, 0) == doctest::Approx(0.6));
    ag::sum(n).backward();
    CHECK(z.grad().all_finite());
  }

  TEST_CASE("conv2d and layout ops") {
    std::mt19937_64 rng(6);
    Var x = leaf({2, 2, 6, 4}, rng), w = leaf({3, 2, 3, 3}, rng), b = leaf({3}, rng);
    expect_grad_ok("conv2d", [&] { return project_output(ag::conv2d(x, w, b, 2, 1), 1); },
                   {{"x", x}, {"w", w}, {"b", b}});
    expect_grad_ok("nchw_to_rows", [&] { return project_output(ag::nchw_to_rows(x), 2); }, {{"x", x}});
    Var r = ag::nchw_to_rows(x);
    const Tensor back = ag::rows_to_nchw(r, 2, 2, 6, 4).value();
    CHECK(max_abs_diff(back, x.value()) == 0.0);
    // position rows are row-major over H then W
    CHECK(r.value().at(1 * 4 + 2, 1) == x.value()[((0 * 2 + 1) * 6 + 1) * 4 + 2]);
  }

  TEST_CASE("embedding never writes gradient to the padding row") {
    std::mt19937_64 rng(7);
    Var table = leaf({5, 3}, rng);
    const std::vector<int64_t> ids{0, 3, 0, 1};
    const std::vector<int64_t> no_padding{2, 3, 2, 1};
    expect_grad_ok("embedding", [&] { return project_output(ag::embedding(table, no_padding), 1); },
                   {{"table", table}});
    table.zero_grad();
    project_output(ag::embedding(table, ids), 2).backward();
    const Tensor g = table.grad();
    for (int64_t c = 0; c < 3; ++c) CHECK(g.at(0, c) == 0.0);
    CHECK(g.at(3, 0) != 0.0);
    CHECK_THROWS(ag::embedding(table, std::vector<int64_t>{5}));
  }

  TEST_CASE("batch norm in both modes") {
    std::mt19937_64 rng(8);
    Var x = leaf({6, 4}, rng), g = leaf({4}, rng), b = leaf({4}, rng);
    BatchNormState st(4);
    expect_grad_ok("batch_norm_batch", [&] { return project_output(ag::batch_norm(x, g, b, st, NormMode::kBatch), 1); },
                   {{"x", x}, {"gamma", g}, {"beta", b}});
    expect_grad_ok("batch_norm_frozen",
                   [&] { return project_output(ag::batch_norm(x, g, b, st, NormMode::kFrozen), 2); },
                   {{"x", x}, {"gamma", g}, {"beta", b}});
  }

  TEST_CASE("batch norm running statistics use momentum 0.1 and unbiased variance") {
    Var x(Tensor({4, 1}, {1, 2, 3, 6}));
    Var g(Tensor({1}, {1.0})), b(Tensor({1}, {0.0}));
    BatchNormState st(1);
    const Tensor y = ag::batch_norm(x, g, b, st, NormMode::kBatch).value();
    const double mean = 3.0, var_biased = (4 + 1 + 0 + 9) / 4.0, var_unbiased = 14.0 / 3.0;
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * mean));
    CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * var_unbiased));
    CHECK(y[0] == doctest::Approx((1 - mean) / std::sqrt(var_biased + 1e-5)));
    const Tensor yf = ag::batch_norm(x, g, b, st, NormMode::kFrozen).value();
    CHECK(yf[3] == doctest::Approx((6 - st.running_mean[0]) / std::sqrt(st.running_var[0] + 1e-5)));
  }

  TEST_CASE("instance norm, cosine and losses") {
    std::mt19937_64 rng(9);
    Var x = leaf({8, 3}, rng), g = leaf({3}, rng), b = leaf({3}, rng);
    expect_grad_ok("instance_norm", [&] { return project_output(ag::instance_norm(x, 4, g, b), 1); },
                   {{"x", x}, {"gamma", g}, {"beta", b}});
    Var p = leaf({3, 5}, rng), q = leaf({4, 5}, rng), q3 = leaf({3, 5}, rng);
    expect_grad_ok("cosine_matrix", [&] { return project_output(ag::cosine_matrix(p, q), 2); }, {{"p", p}, {"q", q}});
    expect_grad_ok("cosine_rows", [&] { return project_output(ag::cosine_rows(p, q3), 3); }, {{"p", p}, {"q", q3}});
    const std::vector<int64_t> labels{4, 0, 2};
    expect_grad_ok("cross_entropy", [&] { return ag::cross_entropy(p, labels); }, {{"p", p}});
    expect_grad_ok("mean", [&] { return ag::mean(p); }, {{"p", p}});
  }

  TEST_CASE("cross entropy of uniform logits is ln(classes) and labels are range-checked") {
    Var z(Tensor({2, 5}));
    const std::vector<int64_t> labels{1, 4};
    CHECK(ag::cross_entropy(z, labels).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    CHECK_THROWS_AS(ag::cross_entropy(z, std::vector<int64_t>{1, 5}), std::invalid_argument);
    CHECK_THROWS(ag::cross_entropy(z, std::vector<int64_t>{-1, 0}));
  }

  TEST_CASE("cosine of a zero vector is zero") {
    Var a(Tensor({2, 2}, {0, 0, 1, 0})), b(Tensor({1, 2}, {1, 1}));
    const Tensor c = ag::cosine_matrix(a, b).value();
    CHECK(c[0] == 0.0);
    CHECK(c[1] == doctest::Approx(1 / std::sqrt(2.0)));
  }

  TEST_CASE("no graph is recorded under NoGradGuard") {
    std::mt19937_64 rng(10);
    Var a = leaf({2, 2}, rng);
    Var out;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      out = ag::mul(a, a);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(out.requires_grad());
  }

  TEST_CASE("shared subexpressions accumulate gradient") {
    Var a(Tensor({1}, {3.0}), true);
    Var b = ag::mul(a, a);
    ag::sum(ag::add(b, b)).backward();
    CHECK(a.grad()[0] == doctest::Approx(12.0));
  }
}
