// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "manetlab/alignment.hpp"
#include "manetlab/model.hpp"
#include "manetlab/objectives.hpp"
#include "manetlab/suppression.hpp"
#include "manetlab/training.hpp"

namespace manet::experiments {

namespace {

// Toy dimensions shared by every gradient case.
constexpr int64_t kBatch = 2;
constexpr int64_t kChannels = 64;
constexpr int64_t kPositions = 48;
constexpr int64_t kLength = 24;
constexpr int64_t kLocalDim = 32;
constexpr int64_t kCenters = 6;
constexpr int64_t kGlobalDim = 64;
constexpr int64_t kClasses = 4;

Var random_leaf(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(shape);
  for (double& v : t.values()) v = n(rng);
  return Var(std::move(t), true);
}

// Running statistics away from the identity so frozen BN is a real affine map.
void perturb_bn(BatchNorm& bn, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3), s(0.5, 1.5);
  for (double& v : bn.state.running_mean.values()) v = u(rng);
  for (double& v : bn.state.running_var.values()) v = s(rng);
  for (double& v : bn.gamma.mutable_value().values()) v = s(rng);
  for (double& v : bn.beta.mutable_value().values()) v = u(rng);
}

void perturb_unit(suppression::RelationUnit& unit, std::mt19937_64& rng) {
  perturb_bn(unit.bn_theta, rng);
  perturb_bn(unit.bn_phi, rng);
  perturb_bn(unit.bn_out, rng);
}

GradCheckOptions options_for(uint64_t seed) {
  GradCheckOptions o;
  o.max_coords_per_input = 24;
  o.seed = seed;
  return o;
}

std::vector<int64_t> toy_labels() { return {0, 1, 0, 2}; }

GradCheckResult check_op(const std::string& op, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const GradCheckOptions opts = options_for(seed);
  const NormMode frozen = NormMode::kFrozen;

  if (op == "relation_vector") {
    suppression::RelationUnit unit(kChannels, kChannels / 8, kChannels / 16, rng);
    perturb_unit(unit, rng);
    Var x = random_leaf({kChannels}, rng), y = random_leaf({kChannels}, rng);
    return gradcheck(op, [&] { return project_output(suppression::relation_vector(x, y, unit, frozen), seed); },
                     {{"x", x}, {"y", y}, {"w_theta", unit.w_theta}, {"w_phi", unit.w_phi}, {"w", unit.w}}, opts);
  }
  if (op == "rgl_forward") {
    suppression::RelationGuidedLocalization rgl({kChannels, kPositions, 8, 16}, rng);
    perturb_unit(rgl.unit, rng);
    perturb_bn(rgl.bn_a, rng);
    Var f = random_leaf({kBatch * kPositions, kChannels}, rng);
    return gradcheck(op, [&] { return project_output(rgl.forward(f, frozen).gated, seed); },
                     {{"features", f}, {"w_a", rgl.w_a}, {"w_theta", rgl.unit.w_theta}, {"w", rgl.unit.w}}, opts);
  }
  if (op == "instance_norm" || op == "caf_forward") {
    suppression::ChannelAttentionFiltration caf({kChannels, kPositions, 4, 1e-5}, rng);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (double& v : caf.gamma.mutable_value().values()) v = u(rng);
    Var f = random_leaf({kBatch * kPositions, kChannels}, rng);
    if (op == "instance_norm")
      return gradcheck(op, [&] { return project_output(caf.instance_norm(f), seed); },
                       {{"features", f}, {"gamma", caf.gamma}, {"beta", caf.beta}}, opts);
    return gradcheck(op, [&] { return project_output(caf.forward(f).restored, seed); },
                     {{"features", f}, {"gamma", caf.gamma}, {"squeeze", caf.squeeze}, {"excite", caf.excite}},
                     opts);
  }
  if (op == "project_shared" || op == "ila_assign" || op == "ila_aggregate") {
    alignment::ImplicitLocalAlignment ila({kChannels, kLocalDim, kCenters, 4}, rng);
    perturb_unit(ila.unit, rng);
    if (op == "project_shared") {
      Var rows = random_leaf({kBatch * kPositions, kChannels}, rng);
      return gradcheck(op, [&] { return project_output(ila.project_shared(rows), seed); },
                       {{"rows", rows}, {"w_s", ila.w_s}}, opts);
    }
    Var z = random_leaf({kBatch * kPositions, kLocalDim}, rng);
    if (op == "ila_assign")
      return gradcheck(op, [&] { return project_output(ila.assign(z, frozen), seed); },
                       {{"z", z}, {"centers", ila.centers}, {"w_theta", ila.unit.w_theta}, {"w", ila.unit.w}}, opts);
    Var a = random_leaf({kBatch * kPositions, kCenters * kLocalDim}, rng);
    const Offsets offsets = uniform_offsets(kBatch, kPositions);
    return gradcheck(op, [&] { return project_output(ila.aggregate(z, a, offsets), seed); },
                     {{"z", z}, {"assignments", a}}, opts);
  }
  if (op == "global_image" || op == "global_text") {
    alignment::GlobalAlignment ga({kChannels, kGlobalDim}, rng);
    if (op == "global_image") {
      Var rows = random_leaf({kBatch * kPositions, kChannels}, rng);
      const Offsets offsets = uniform_offsets(kBatch, kPositions);
      return gradcheck(op, [&] { return project_output(ga.image(rows, offsets), seed); },
                       {{"rows", rows}, {"w_image", ga.w_image}}, opts);
    }
    Var rows = random_leaf({kBatch * kLength, kChannels}, rng);
    const std::vector<int64_t> valid{kLength, 9};
    return gradcheck(op, [&] { return project_output(ga.text(rows, kLength, valid), seed); },
                     {{"rows", rows}, {"w_text", ga.w_text}}, opts);
  }
  const std::vector<int64_t> labels = toy_labels();
  const int64_t b = static_cast<int64_t>(labels.size());
  if (op == "id_loss") {
    objectives::ClassifierBank bank(kClasses, kGlobalDim, kCenters, kLocalDim, rng);
    Var vg = random_leaf({b, kGlobalDim}, rng), tg = random_leaf({b, kGlobalDim}, rng);
    Var vl = random_leaf({b, kCenters * kLocalDim}, rng), tl = random_leaf({b, kCenters * kLocalDim}, rng);
    return gradcheck(op, [&] { return objectives::id_loss(vg, tg, vl, tl, labels, bank); },
                     {{"v_global", vg}, {"t_global", tg}, {"v_local", vl}, {"t_local", tl}, {"w_global", bank.global}},
                     opts);
  }
  if (op == "ranking_loss") {
    // Wide margins keep every hinge active so the check sees all four terms.
    objectives::LossConfig cfg;
    cfg.alpha1 = cfg.alpha2 = 2.5;
    Var v = random_leaf({b, kGlobalDim}, rng), t = random_leaf({b, kGlobalDim}, rng);
    const std::vector<int64_t> surrogates{2, 1, 0, 3};
    return gradcheck(op, [&] { return objectives::ranking_loss(v, t, surrogates, labels, cfg); },
                     {{"v", v}, {"t", t}}, opts);
  }
  if (op == "consistency_loss") {
    Var ft = random_leaf({b, kChannels}, rng), fh = random_leaf({b, kChannels}, rng);
    return gradcheck(op, [&] { return objectives::consistency_loss(ft, fh, labels, 2.5); },
                     {{"f_tilde", ft}, {"f_hat", fh}}, opts);
  }
  throw UsageError("unknown gradcheck operation '" + op + "'");
}

const std::map<std::string, std::vector<std::string>>& module_groups() {
  static const std::map<std::string, std::vector<std::string>> g = {
      {"suppression", {"relation_vector", "rgl_forward", "instance_norm", "caf_forward"}},
      {"rgl", {"relation_vector", "rgl_forward"}},
      {"caf", {"instance_norm", "caf_forward"}},
      {"alignment", {"project_shared", "ila_assign", "ila_aggregate", "global_image", "global_text"}},
      {"ila", {"project_shared", "ila_assign", "ila_aggregate"}},
      {"ga", {"global_image", "global_text"}},
      {"objectives", {"id_loss", "ranking_loss", "consistency_loss"}},
  };
  return g;
}

}  // namespace

const std::vector<std::string>& gradcheck_operations() {
  static const std::vector<std::string> ops = {
      "relation_vector", "rgl_forward", "instance_norm", "caf_forward",  "project_shared", "ila_assign",
      "ila_aggregate",   "global_image", "global_text",  "id_loss",      "ranking_loss",   "consistency_loss"};
  return ops;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& selector, uint64_t seed) {
  std::vector<std::string> ops;
  if (selector == "all") {
    ops = gradcheck_operations();
  } else if (auto it = module_groups().find(selector); it != module_groups().end()) {
    ops = it->second;
  } else if (std::find(gradcheck_operations().begin(), gradcheck_operations().end(), selector) !=
             gradcheck_operations().end()) {
    ops = {selector};
  } else {
    throw UsageError("unknown gradcheck selector '" + selector + "'");
  }
  std::vector<GradCheckResult> out;
  for (const std::string& op : ops) out.push_back(check_op(op, seed));
  return out;
}

Variant parse_variant(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "baseline") return {"Baseline", false, false, false, false};
  if (t == "full" || t == "manet") return {"GA+ILA+RGL+CAF", true, true, true, true};
  Variant v;
  std::stringstream ss(t);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "ga") v.ga = true;
    else if (part == "ila") v.ila = true;
    else if (part == "rgl") v.rgl = true;
    else if (part == "caf") v.caf = true;
    else throw UsageError("unknown variant component '" + part + "'");
  }
  model::ModelConfig m;
  m.ga = v.ga;
  m.ila = v.ila;
  m.rgl = v.rgl;
  m.caf = v.caf;
  v.name = m.variant();
  return v;
}

const std::vector<Variant>& standard_variants() {
  static const std::vector<Variant> v = {parse_variant("baseline"),   parse_variant("ga"),
                                         parse_variant("ila"),        parse_variant("ga+ila"),
                                         parse_variant("ga+ila+rgl"), parse_variant("ga+ila+caf"),
                                         parse_variant("full")};
  return v;
}

AblationRow ablation_run(const Variant& variant, uint64_t seed, const config::RunConfig& base,
                         const datagen::Dataset& dataset, const std::filesystem::path& run_dir) {
  config::RunConfig cfg = base;
  cfg.set("ga", variant.ga ? "true" : "false");
  cfg.set("ila", variant.ila ? "true" : "false");
  cfg.set("rgl", variant.rgl ? "true" : "false");
  cfg.set("caf", variant.caf ? "true" : "false");
  cfg.set("seed", std::to_string(seed));
  model::Model m(cfg.model_config(dataset.vocab.size(), dataset.config.num_ids, dataset.config.caption_length));
  training::TrainOptions opts;
  opts.evaluate_each_epoch = false;
  opts.out_dir = run_dir;
  if (!run_dir.empty()) cfg.write_resolved(run_dir);
  const training::TrainResult r = training::train(m, dataset, cfg.train_config(), opts);
  return {variant.name, seed, r.final_rank, param_count(m.registry())};
}

const char* ablation_header() { return "variant,seed,r1,r5,r10,params"; }

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  out << ablation_header() << '\n' << std::setprecision(10);
  for (const AblationRow& r : rows)
    out << r.variant << ',' << r.seed << ',' << r.rank.r1 << ',' << r.rank.r5 << ',' << r.rank.r10 << ','
        << r.params << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<KRow> sweep_k(const std::vector<int64_t>& values, const config::RunConfig& base,
                          const datagen::Dataset& dataset) {
  std::vector<int64_t> ks = values;
  std::sort(ks.begin(), ks.end());
  std::vector<KRow> rows;
  for (int64_t k : ks) {
    if (k < 1) throw UsageError("K must be >= 1");
    config::RunConfig cfg = base;
    cfg.set("centers", std::to_string(k));
    model::Model m(cfg.model_config(dataset.vocab.size(), dataset.config.num_ids, dataset.config.caption_length));
    training::TrainOptions opts;
    opts.evaluate_each_epoch = false;
    rows.push_back({k, training::train(m, dataset, cfg.train_config(), opts).final_rank.r1});
  }
  return rows;
}

void write_k_csv(const std::filesystem::path& path, const std::vector<KRow>& rows) {
  std::ofstream out(path);
  out << "k,r1\n" << std::setprecision(10);
  for (const KRow& r : rows) out << r.k << ',' << r.r1 << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_k_svg(const std::filesystem::path& path, const std::vector<KRow>& rows) {
  constexpr double w = 480, h = 320, left = 60, right = 20, top = 20, bottom = 50;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">number of topic centers K</text>\n";
  out << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 16 " << (top + h - bottom) / 2 << ")\">R@1</text>\n";
  if (!rows.empty()) {
    const double kmin = static_cast<double>(rows.front().k), kmax = static_cast<double>(rows.back().k);
    double lo = 1.0, hi = 0.0;
    for (const KRow& r : rows) {
      lo = std::min(lo, r.r1);
      hi = std::max(hi, r.r1);
    }
    lo = std::max(0.0, lo - 0.05);
    hi = std::min(1.0, hi + 0.05);
    if (hi <= lo) hi = lo + 0.1;
    auto px = [&](double k) {
      return kmax == kmin ? (left + w - right) / 2 : left + (k - kmin) / (kmax - kmin) * (w - left - right);
    };
    auto py = [&](double r) { return h - bottom - (r - lo) / (hi - lo) * (h - top - bottom); };
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const KRow& r : rows) out << px(static_cast<double>(r.k)) << ',' << py(r.r1) << ' ';
    out << "\"/>\n";
    for (const KRow& r : rows) {
      out << "<circle cx=\"" << px(static_cast<double>(r.k)) << "\" cy=\"" << py(r.r1)
          << "\" r=\"3\" fill=\"steelblue\"/>\n";
      out << "<text x=\"" << px(static_cast<double>(r.k)) << "\" y=\"" << h - bottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\">" << r.k << "</text>\n";
    }
    out << std::fixed << std::setprecision(2);
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(lo) << "\" text-anchor=\"end\" font-size=\"11\">" << lo
        << "</text>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(hi) << "\" text-anchor=\"end\" font-size=\"11\">" << hi
        << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace manet::experiments
