// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "manetlab/alignment.hpp"
#include "test_util.hpp"

using namespace manet;
using namespace manet::alignment;

namespace {

ImplicitLocalAlignment toy_ila(std::mt19937_64& rng, Assignment mode = Assignment::kRelation) {
  IlaConfig c;
  c.assignment = mode;
  return ImplicitLocalAlignment(c, rng);
}

}  // namespace

TEST_SUITE("alignment") {
  TEST_CASE("shared projection normalizes positions before W_s") {
    std::mt19937_64 rng(1);
    ImplicitLocalAlignment ila = toy_ila(rng);
    Tensor rows(Shape{2, 64});
    rows.at(0, 0) = 3.0;
    rows.at(0, 5) = 4.0;  // norm 5
    const Tensor z = ila.project_shared(Var(rows)).value();
    CHECK(z.shape() == Shape{2, 32});
    for (int64_t d = 0; d < 32; ++d) {
      CHECK(z.at(0, d) == doctest::Approx(0.6 * ila.w_s.value().at(d, 0) + 0.8 * ila.w_s.value().at(d, 5)));
      CHECK(z.at(1, d) == 0.0);
    }
    ImplicitLocalAlignment full_scale({2048, 512, 6, 4}, rng);
    CHECK(full_scale.project_shared(Var(testutil::random_tensor({1, 2048}, rng))).shape() == Shape{1, 512});
    CHECK(full_scale.unit.mid_dim() == 128);
    CHECK(full_scale.unit.out_dim() == 512);
  }

  TEST_CASE("assignments are nonnegative and the inner-product ablation broadcasts a scalar") {
    std::mt19937_64 rng(2);
    ImplicitLocalAlignment ila = toy_ila(rng);
    Var z(testutil::random_tensor({10, 32}, rng));
    const Tensor a = ila.assign(z, NormMode::kFrozen).value();
    CHECK(a.shape() == Shape{10, 6 * 32});
    for (double v : a.values()) CHECK(v >= 0.0);
    for (int64_t j = 0; j < 6; ++j) {
      const Tensor one = ila.assign_one(Var(Tensor(Shape{32}, std::vector<double>(z.value().data() + 3 * 32,
                                                                                  z.value().data() + 4 * 32))),
                                        j, NormMode::kFrozen)
                             .value();
      for (int64_t d = 0; d < 32; ++d) CHECK(one[d] == doctest::Approx(a.at(3, j * 32 + d)).epsilon(1e-13));
    }

    ImplicitLocalAlignment ip = toy_ila(rng, Assignment::kInnerProduct);
    const Tensor b = ip.assign(z, NormMode::kFrozen).value();
    for (int64_t i = 0; i < 10; ++i)
      for (int64_t j = 0; j < 6; ++j) {
        double dot = 0.0;
        for (int64_t d = 0; d < 32; ++d) dot += z.value().at(i, d) * ip.centers.value().at(j, d);
        for (int64_t d = 0; d < 32; ++d) CHECK(b.at(i, j * 32 + d) == doctest::Approx(dot).epsilon(1e-13));
      }
  }

  TEST_CASE("aggregation: hand-set 2 positions, 1 center") {
    std::mt19937_64 rng(3);
    ImplicitLocalAlignment ila({3, 2, 1, 2}, rng);
    ila.w_s.mutable_value() = Tensor({2, 3}, {1.0, -0.5, 0.25, 0.5, 2.0, -1.0});
    ila.centers.mutable_value() = Tensor({1, 2}, {0.3, -0.7});
    ila.unit.w_theta.mutable_value() = Tensor({1, 2}, {1.5, -0.5});
    ila.unit.w_phi.mutable_value() = Tensor({1, 2}, {-0.25, 1.0});
    ila.unit.w.mutable_value() = Tensor({2, 1}, {2.0, -1.0});
    const Tensor f({2, 3}, {1.0, 2.0, 2.0, -1.0, 0.5, 3.0});

    // independent evaluation with frozen identity batch norm
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    auto relu = [](double v) { return v > 0 ? v : 0.0; };
    const double phi = relu(s * (-0.25 * 0.3 + 1.0 * -0.7));
    double expect[2] = {0.0, 0.0};
    for (int p = 0; p < 2; ++p) {
      const double* row = f.data() + 3 * p;
      const double n = std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2]);
      const double u[3] = {row[0] / n, row[1] / n, row[2] / n};
      const double z0 = 1.0 * u[0] - 0.5 * u[1] + 0.25 * u[2];
      const double z1 = 0.5 * u[0] + 2.0 * u[1] - 1.0 * u[2];
      const double theta = relu(s * (1.5 * z0 - 0.5 * z1));
      const double a0 = relu(s * (2.0 * (theta - phi)));
      const double a1 = relu(s * (-1.0 * (theta - phi)));
      expect[0] += a0 * z0;
      expect[1] += a1 * z1;
    }
    const Tensor v = ila.forward(Var(f), {0, 2}, NormMode::kFrozen).value();
    CHECK(v.shape() == Shape{1, 2});
    CHECK(v[0] == doctest::Approx(expect[0]).epsilon(1e-14));
    CHECK(v[1] == doctest::Approx(expect[1]).epsilon(1e-14));
  }

  TEST_CASE("aggregation is a brute-force sum of a * z and ignores position order") {
    std::mt19937_64 rng(4);
    ImplicitLocalAlignment ila = toy_ila(rng);
    for (int trial = 0; trial < 5; ++trial) {
      const int64_t n = 3 + trial;
      Var z(testutil::random_tensor({n, 32}, rng));
      const Tensor a = ila.assign(z, NormMode::kFrozen).value();
      const Tensor v = ila.aggregate(z, Var(a), {0, n}).value();
      for (int64_t j = 0; j < 6; ++j)
        for (int64_t d = 0; d < 32; ++d) {
          double s = 0.0;
          for (int64_t i = 0; i < n; ++i) s += a.at(i, j * 32 + d) * z.value().at(i, d);
          CHECK(v.at(0, j * 32 + d) == doctest::Approx(s).epsilon(1e-13));
        }
      std::vector<int64_t> perm(static_cast<size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Var zp = ag::gather_rows(z, perm);
      const Tensor vp = ila.aggregate(zp, ila.assign(zp, NormMode::kFrozen), {0, n}).value();
      CHECK(max_abs_diff(v, vp) < 1e-12);
    }
    Var z1(testutil::random_tensor({1, 32}, rng));
    const Tensor a1 = ila.assign(z1, NormMode::kFrozen).value();
    const Tensor v1 = ila.aggregate(z1, Var(a1), {0, 1}).value();
    for (int64_t j = 0; j < 6; ++j)
      for (int64_t d = 0; d < 32; ++d) CHECK(v1.at(0, j * 32 + d) == a1.at(0, j * 32 + d) * z1.value()[d]);
    CHECK(v1.shape() == Shape{1, 192});
  }

  TEST_CASE("pair pass equals per-modality passes") {
    std::mt19937_64 rng(5);
    ImplicitLocalAlignment ila = toy_ila(rng);
    Var img(testutil::random_tensor({2 * 48, 64}, rng)), txt(testutil::random_tensor({9, 64}, rng));
    const Offsets io = uniform_offsets(2, 48), to{0, 4, 9};
    const IlaPair p = ila.forward_pair(img, io, txt, to, NormMode::kFrozen);
    CHECK(max_abs_diff(p.image.value(), ila.forward(img, io, NormMode::kFrozen).value()) == 0.0);
    CHECK(max_abs_diff(p.text.value(), ila.forward(txt, to, NormMode::kFrozen, Modality::kText).value()) == 0.0);
    const IlaPair q = ila.forward_pair(img, io, txt, to, NormMode::kFrozen, CenterRoute::kImageOnly);
    CHECK(max_abs_diff(p.text.value(), q.text.value()) == 0.0);
  }

  TEST_CASE("each modality keeps its own running statistics") {
    std::mt19937_64 rng(11);
    ImplicitLocalAlignment ila = toy_ila(rng);
    ParamRegistry reg;
    ila.register_params(reg);
    int64_t text_buffers = 0;
    for (const BufferRef& b : reg.buffers()) text_buffers += b.name.find(".text.") != std::string::npos;
    CHECK(text_buffers == 4);
    Var img(testutil::random_tensor({48, 64}, rng)), txt(testutil::random_tensor({7, 64}, rng, 3.0));
    const Tensor image_before = ila.unit.bn_theta.state.running_mean;
    ila.forward(txt, {0, 7}, NormMode::kBatch, Modality::kText);
    CHECK(max_abs_diff(ila.unit.bn_theta.state.running_mean, image_before) == 0.0);
    CHECK(ila.text_theta.running_mean.max_abs() > 0.0);
    ila.forward(img, {0, 48}, NormMode::kBatch);
    CHECK(max_abs_diff(ila.unit.bn_theta.state.running_mean, ila.text_theta.running_mean) > 0.0);
    // batch statistics come from the rows of one modality only
    const Tensor alone = ila.forward(txt, {0, 7}, NormMode::kBatch, Modality::kText).value();
    const IlaPair p = ila.forward_pair(img, {0, 48}, txt, {0, 7}, NormMode::kBatch);
    CHECK(max_abs_diff(alone, p.text.value()) < 1e-12);
  }

  TEST_CASE("perturbing one center moves both modalities") {
    std::mt19937_64 rng(6);
    ImplicitLocalAlignment ila = toy_ila(rng);
    Var img(testutil::random_tensor({48, 64}, rng)), txt(testutil::random_tensor({7, 64}, rng));
    const Offsets io{0, 48}, to{0, 7};
    const IlaPair before = ila.forward_pair(img, io, txt, to, NormMode::kFrozen);
    ila.centers.mutable_value().at(2, 5) += 0.5;
    const IlaPair after = ila.forward_pair(img, io, txt, to, NormMode::kFrozen);
    CHECK(max_abs_diff(before.image.value(), after.image.value()) > 0.0);
    CHECK(max_abs_diff(before.text.value(), after.text.value()) > 0.0);
  }

  TEST_CASE("center initializations") {
    std::mt19937_64 rng(7);
    CHECK(make_centers(6, 32, CenterInit::kZeros, rng).max_abs() == 1e-8);
    CHECK(make_centers(6, 32, CenterInit::kConstant, rng)[17] == 0.3);
    CHECK(make_centers(6, 32, CenterInit::kOnes, rng).sum() == 6 * 32);
    const Tensor id = make_centers(6, 32, CenterInit::kIdentity, rng);
    CHECK(id.at(3, 3) == 1.0);
    CHECK(id.sum() == 6.0);
    const Tensor o = make_centers(6, 32, CenterInit::kOrthogonal, rng);
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 6; ++j) {
        double dot = 0.0;
        for (int64_t d = 0; d < 32; ++d) dot += o.at(i, d) * o.at(j, d);
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
      }
    const Tensor n = make_centers(200, 50, CenterInit::kNormal, rng);
    const double mean = n.sum() / 10000.0;
    double var = 0.0;
    for (double v : n.values()) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var / 10000.0 - 1.0) < 0.05);
    for (const char* s : {"normal", "uniform", "kaiming_normal", "xavier_normal", "zeros", "ones", "identity",
                          "constant", "orthogonal"})
      CHECK(to_string(parse_center_init(s)) == s);
    CHECK_THROWS(parse_center_init("bogus"));
  }

  TEST_CASE("global image head projects then max-pools") {
    std::mt19937_64 rng(8);
    GlobalAlignment ga(GlobalConfig{}, rng);
    Tensor rows = testutil::random_tensor({48, 64}, rng, 0.01);
    // a position whose projection dominates every output channel
    Tensor proj = ag::linear(Var(rows), ga.w_image).value();
    const Tensor big = testutil::random_tensor({1, 64}, rng);
    std::vector<double> dir(64);
    for (int64_t c = 0; c < 64; ++c) rows.at(11, c) = 0.0;
    // choose the position value so that W x = large positive vector: x = W^T 1 * 100
    for (int64_t c = 0; c < 64; ++c) {
      double s = 0.0;
      for (int64_t d = 0; d < 64; ++d) s += ga.w_image.value().at(d, c);
      rows.at(11, c) = 0.0;
      dir[static_cast<size_t>(c)] = s;
    }
    // W W^T is positive definite; scale until every channel of row 11 leads
    for (int64_t c = 0; c < 64; ++c) rows.at(11, c) = 1000.0 * dir[static_cast<size_t>(c)];
    proj = ag::linear(Var(rows), ga.w_image).value();
    bool dominant = true;
    for (int64_t d = 0; d < 64; ++d)
      for (int64_t p = 0; p < 48; ++p) dominant = dominant && (p == 11 || proj.at(p, d) < proj.at(11, d));
    if (dominant) {
      const Tensor v = ga.image(Var(rows), {0, 48}).value();
      for (int64_t d = 0; d < 64; ++d) CHECK(v[d] == proj.at(11, d));
    }
    Tensor flat(Shape{48, 64});
    for (int64_t p = 0; p < 48; ++p)
      for (int64_t c = 0; c < 64; ++c) flat.at(p, c) = big[c];
    const Tensor vc = ga.image(Var(flat), {0, 48}).value();
    const Tensor pc = ag::linear(Var(big), ga.w_image).value();
    CHECK(max_abs_diff(vc.reshaped({64}), pc.reshaped({64})) < 1e-14);
    CHECK(vc.shape() == Shape{1, 64});
  }

  TEST_CASE("global text head max-pools valid positions then projects") {
    std::mt19937_64 rng(9);
    GlobalAlignment ga(GlobalConfig{}, rng);
    const int64_t L = 5;
    Tensor e = testutil::random_tensor({L, 64}, rng);
    const Tensor single = ga.text(Var(e), L, std::vector<int64_t>{1}).value();
    const Tensor expect = ag::linear(ag::slice_rows(Var(e), 0, 1), ga.w_text).value();
    CHECK(max_abs_diff(single, expect) < 1e-14);

    const Tensor three = ga.text(Var(e), L, std::vector<int64_t>{3}).value();
    Tensor dup = e;
    for (int64_t c = 0; c < 64; ++c) dup.at(3, c) = e.at(1, c);
    CHECK(max_abs_diff(ga.text(Var(dup), L, std::vector<int64_t>{4}).value(), three) == 0.0);

    // huge padding values would win an unmasked max
    Tensor padded = e;
    for (int64_t c = 0; c < 64; ++c) padded.at(4, c) = 1e6;
    CHECK(max_abs_diff(ga.text(Var(padded), L, std::vector<int64_t>{3}).value(), three) == 0.0);
    CHECK_THROWS_AS(ga.text(Var(e), L, std::vector<int64_t>{0}), std::invalid_argument);
  }

  TEST_CASE("text padding rows never reach the local features") {
    std::mt19937_64 rng(10);
    ImplicitLocalAlignment ila = toy_ila(rng);
    const int64_t L = 6;
    Tensor e = testutil::random_tensor({L, 64}, rng);
    const ValidRows vr = valid_rows(L, std::vector<int64_t>{4});
    CHECK(vr.rows == std::vector<int64_t>{0, 1, 2, 3});
    const Tensor a = ila.forward(ag::gather_rows(Var(e), vr.rows), vr.offsets, NormMode::kFrozen).value();
    for (int64_t c = 0; c < 64; ++c) e.at(5, c) = 50.0;
    const Tensor b = ila.forward(ag::gather_rows(Var(e), vr.rows), vr.offsets, NormMode::kFrozen).value();
    CHECK(max_abs_diff(a, b) == 0.0);
  }
}
