// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "manetlab/suppression.hpp"
#include "test_util.hpp"

using namespace manet;
using namespace manet::suppression;

TEST_SUITE("suppression") {
  TEST_CASE("relation of a vector with itself is zero when the embeddings are tied") {
    std::mt19937_64 rng(1);
    RelationUnit unit(16, 4, 2, rng);
    unit.w_phi.mutable_value() = unit.w_theta.value();
    Var x(testutil::random_tensor({16}, rng));
    const Tensor r = relation_vector(x, x, unit, NormMode::kFrozen).value();
    CHECK(r.shape() == Shape{2});
    CHECK(r.max_abs() == 0.0);
  }

  TEST_CASE("relation components are nonnegative") {
    std::mt19937_64 rng(2);
    RelationUnit unit(16, 4, 8, rng);
    for (int trial = 0; trial < 20; ++trial) {
      Var x(testutil::random_tensor({16}, rng, 3.0)), y(testutil::random_tensor({16}, rng, 3.0));
      for (double v : relation_vector(x, y, unit, NormMode::kFrozen).value().values()) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("relation unit widths follow the reduction ratios") {
    std::mt19937_64 rng(3);
    RelationUnit full_scale(2048, 2048 / 32, 2048 / 256, rng);
    CHECK(full_scale.mid_dim() == 64);
    CHECK(full_scale.out_dim() == 8);
    RelationGuidedLocalization rgl(RglConfig{}, rng);
    CHECK(rgl.relation_width() == 192);
    CHECK(rgl.w_a.shape() == Shape{64, 256});
  }

  TEST_CASE("attention lies strictly inside (0,1) and ones leave features unchanged") {
    std::mt19937_64 rng(4);
    RelationGuidedLocalization rgl(RglConfig{}, rng);
    Var f(testutil::random_tensor({2 * 48, 64}, rng));
    for (NormMode mode : {NormMode::kBatch, NormMode::kFrozen}) {
      const RglOutput out = rgl.forward(f, mode);
      for (double a : out.attention.value().values()) CHECK((a > 0.0 && a < 1.0));
      CHECK(max_abs_diff(out.gated.value(), ag::mul(f, out.attention).value()) == 0.0);
    }
    const Tensor same = apply_attention(f, Var(Tensor(f.shape(), 1.0))).value();
    CHECK(max_abs_diff(same, f.value()) == 0.0);
  }

  TEST_CASE("permuting positions permutes the attention") {
    std::mt19937_64 rng(5);
    const int64_t c = 8, n = 6;
    RelationGuidedLocalization rgl({c, n, 2, 4}, rng);
    RelationGuidedLocalization moved({c, n, 2, 4}, rng);
    moved.unit = rgl.unit;
    moved.bn_a = rgl.bn_a;
    std::vector<int64_t> sigma(static_cast<size_t>(n));
    std::iota(sigma.begin(), sigma.end(), 0);
    std::shuffle(sigma.begin(), sigma.end(), rng);
    // Relation block j of the moved model reads block sigma[j] of the original.
    const int64_t dout = rgl.unit.out_dim();
    Tensor wa = rgl.w_a.value();
    for (int64_t row = 0; row < c; ++row)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t d = 0; d < dout; ++d)
          wa.at(row, c + j * dout + d) = rgl.w_a.value().at(row, c + sigma[static_cast<size_t>(j)] * dout + d);
    moved.w_a.mutable_value() = wa;
    const Tensor f = testutil::random_tensor({n, c}, rng);
    Tensor fp(Shape{n, c});
    for (int64_t k = 0; k < n; ++k)
      for (int64_t ch = 0; ch < c; ++ch) fp.at(k, ch) = f.at(sigma[static_cast<size_t>(k)], ch);
    const Tensor a = rgl.forward(Var(f), NormMode::kFrozen).attention.value();
    const Tensor ap = moved.forward(Var(fp), NormMode::kFrozen).attention.value();
    for (int64_t k = 0; k < n; ++k)
      for (int64_t ch = 0; ch < c; ++ch)
        CHECK(ap.at(k, ch) == doctest::Approx(a.at(sigma[static_cast<size_t>(k)], ch)).epsilon(1e-12));
  }

  TEST_CASE("instance norm: constant channels, statistics, idempotence") {
    std::mt19937_64 rng(6);
    ChannelAttentionFiltration caf(CafConfig{}, rng);
    Tensor constant(Shape{48, 64}, 3.25);
    CHECK(caf.instance_norm(Var(constant)).value().max_abs() == 0.0);

    const Tensor x = testutil::random_tensor({2 * 48, 64}, rng, 2.0);
    const Tensor y = caf.instance_norm(Var(x)).value();
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t ch = 0; ch < 64; ++ch) {
        double m = 0.0, v = 0.0;
        for (int64_t p = 0; p < 48; ++p) m += y.at(b * 48 + p, ch);
        m /= 48;
        for (int64_t p = 0; p < 48; ++p) v += (y.at(b * 48 + p, ch) - m) * (y.at(b * 48 + p, ch) - m);
        CHECK(std::abs(m) < 1e-6);
        CHECK(std::abs(std::sqrt(v / 48) - 1.0) < 1e-4);
      }
    const Tensor yy = caf.instance_norm(Var(y)).value();
    CHECK(max_abs_diff(yy, y) < 1e-4);
  }

  TEST_CASE("filtration algebra and forced gates") {
    std::mt19937_64 rng(7);
    ChannelAttentionFiltration caf(CafConfig{}, rng);
    Var g(testutil::random_tensor({2 * 48, 64}, rng));
    const CafOutput out = caf.forward(g);
    CHECK(max_abs_diff(ag::add(out.normalized, out.removed).value(), g.value()) < 1e-6);
    CHECK(out.gate.shape() == Shape{2, 64});
    for (double w : out.gate.value().values()) CHECK((w > 0.0 && w < 1.0));
    CHECK(max_abs_diff(caf.forward(g, 1.0).restored.value(), g.value()) < 1e-12);
    CHECK(max_abs_diff(caf.forward(g, 0.0).restored.value(), out.normalized.value()) == 0.0);
  }

  TEST_CASE("suppression gradients in batch-statistics mode") {
    std::mt19937_64 rng(8);
    RelationGuidedLocalization rgl({8, 6, 2, 4}, rng);
    Var f = testutil::leaf({2 * 6, 8}, rng);
    auto r = gradcheck("rgl_batch", [&] { return project_output(rgl.forward(f, NormMode::kBatch).gated, 3); },
                       {{"f", f}, {"w_a", rgl.w_a}, {"w_phi", rgl.unit.w_phi}, {"gamma", rgl.bn_a.gamma}});
    CHECK(r.max_relative_error < 1e-4);
    ChannelAttentionFiltration caf({8, 6, 2, 1e-5}, rng);
    auto c = gradcheck("caf", [&] { return project_output(caf.forward(f).restored, 4); },
                       {{"f", f}, {"beta", caf.beta}, {"squeeze", caf.squeeze}, {"excite", caf.excite}});
    CHECK(c.max_relative_error < 1e-4);
  }
}
