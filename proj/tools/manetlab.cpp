// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// manetlab: datagen | train | eval | ablate | gradcheck | sweep-k

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manetlab/config.hpp"
#include "manetlab/datagen.hpp"
#include "manetlab/experiments.hpp"
#include "manetlab/kernels.hpp"
#include "manetlab/retrieval.hpp"
#include "manetlab/training.hpp"

namespace fs = std::filesystem;
using namespace manet;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct RunFlags {
  std::string config_file;
  std::vector<std::string> sets;
  int64_t seed = -1;
  int64_t epochs = -1;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config_file, "key = value config file");
  cmd->add_option("--set", f.sets, "override one key (key=value), repeatable");
  cmd->add_option("--seed", f.seed, "training and initialization seed");
  cmd->add_option("--epochs", f.epochs, "number of epochs");
}

config::RunConfig resolve(const RunFlags& f) {
  config::RunConfig cfg;
  if (!f.config_file.empty()) cfg.merge_file(f.config_file);
  cfg.merge_environment();
  for (const std::string& s : f.sets) cfg.merge_assignment(s);
  if (f.seed >= 0) cfg.set("seed", std::to_string(f.seed));
  if (f.epochs >= 0) cfg.set("epochs", std::to_string(f.epochs));
  cfg.train_config();  // validates
  if (const int64_t t = cfg.get_int("threads"); t > 0) kernels::set_threads(static_cast<int>(t));
  return cfg;
}

model::ModelConfig model_for(const config::RunConfig& cfg, const datagen::Dataset& ds) {
  return cfg.model_config(ds.vocab.size(), ds.config.num_ids, ds.config.caption_length);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-image person search on synthetic pedestrians"};
  app.require_subcommand(1);

  // datagen
  datagen::DatasetConfig dc;
  std::string data_out;
  auto* datagen_cmd = app.add_subcommand("datagen", "generate a synthetic dataset directory");
  datagen_cmd->add_option("--seed", dc.seed, "generator seed");
  datagen_cmd->add_option("--num-ids", dc.num_ids, "number of identities");
  datagen_cmd->add_option("--images-per-id", dc.images_per_id, "images per identity");
  datagen_cmd->add_option("--caption-length", dc.caption_length, "padded caption length L");
  datagen_cmd->add_option("--holdout-per-id", dc.holdout_per_id, "held-out images per identity");
  datagen_cmd->add_option("--out", data_out, "output directory")->required();

  // train
  RunFlags train_flags;
  std::string train_data, train_out;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "run directory")->required();
  add_run_flags(train_cmd, train_flags);

  // eval
  std::string eval_ckpt, eval_config, eval_data, eval_out, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "config.resolved of the run (default: next to the checkpoint)");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--split", eval_split, "test | train")->check(CLI::IsMember({"test", "train"}));
  eval_cmd->add_option("--out", eval_out, "output directory")->required();

  // ablate
  RunFlags ablate_flags;
  std::string ablate_data, ablate_out, ablate_seeds = "1,2,3";
  std::vector<std::string> ablate_variants{"baseline", "ga+ila", "full"};
  auto* ablate_cmd = app.add_subcommand("ablate", "train component variants over seeds");
  ablate_cmd->add_option("--data", ablate_data, "dataset directory")->required();
  ablate_cmd->add_option("--out", ablate_out, "run directory")->required();
  ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seeds");
  ablate_cmd->add_option("--variants", ablate_variants, "baseline, ga, ila, ga+ila, ga+ila+rgl, ga+ila+caf, full");
  add_run_flags(ablate_cmd, ablate_flags);

  // gradcheck
  std::string grad_selector = "all", grad_out;
  uint64_t grad_seed = 1;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
  grad_cmd->add_option("--module", grad_selector, "all | suppression | alignment | objectives | <operation>");
  grad_cmd->add_option("--seed", grad_seed, "seed");
  grad_cmd->add_option("--out", grad_out, "optional directory for gradcheck.csv");

  // sweep-k
  RunFlags sweep_flags;
  std::string sweep_data, sweep_out, sweep_values = "1,2,4,6,8";
  auto* sweep_cmd = app.add_subcommand("sweep-k", "train one model per number of topic centers");
  sweep_cmd->add_option("--data", sweep_data, "dataset directory")->required();
  sweep_cmd->add_option("--out", sweep_out, "run directory")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated K values");
  add_run_flags(sweep_cmd, sweep_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*datagen_cmd) {
      const datagen::Dataset ds = datagen::generate_dataset(dc);
      datagen::write_dataset(ds, data_out);
      std::cout << "wrote " << ds.samples.size() << " samples, vocabulary " << ds.vocab.size() << " to " << data_out
                << '\n';
      return kOk;
    }
    if (*train_cmd) {
      const config::RunConfig cfg = resolve(train_flags);
      const datagen::Dataset ds = datagen::load_dataset(train_data);
      cfg.write_resolved(train_out);
      model::Model m(model_for(cfg, ds));
      training::TrainOptions opts;
      opts.out_dir = train_out;
      opts.verbose = true;
      const training::TrainResult r = training::train(m, ds, cfg.train_config(), opts);
      std::cout << "best R@1 " << r.best_r1 << " at epoch " << r.best_epoch << "; final R@1 " << r.final_rank.r1
                << " R@5 " << r.final_rank.r5 << " R@10 " << r.final_rank.r10 << '\n';
      return kOk;
    }
    if (*eval_cmd) {
      config::RunConfig cfg;
      const fs::path cfg_path = eval_config.empty() ? fs::path(eval_ckpt).parent_path() / "config.resolved"
                                                    : fs::path(eval_config);
      cfg.merge_file(cfg_path);
      const datagen::Dataset ds = datagen::load_dataset(eval_data);
      model::Model m(model_for(cfg, ds));
      training::load_checkpoint(eval_ckpt, m, nullptr);
      const auto split = ds.split(eval_split == "test");
      const retrieval::SplitTensors st = retrieval::stack_split(split);
      const model::Embeddings img = m.embed_images(st.images);
      const model::Embeddings txt = m.embed_texts(st.tokens, st.valid_lengths);
      const retrieval::RankMetrics rm =
          retrieval::rank_metrics(retrieval::fuse_similarity(txt, img).fused, st.labels, st.labels);
      fs::create_directories(eval_out);
      cfg.write_resolved(eval_out);
      retrieval::write_embeddings(fs::path(eval_out) / "embeddings.arc", img, txt, st.labels);
      std::ofstream csv(fs::path(eval_out) / "eval.csv");
      csv << "split,r1,r5,r10\n" << std::setprecision(10) << eval_split << ',' << rm.r1 << ',' << rm.r5 << ','
          << rm.r10 << '\n';
      std::cout << eval_split << " R@1 " << rm.r1 << " R@5 " << rm.r5 << " R@10 " << rm.r10 << '\n';
      return kOk;
    }
    if (*ablate_cmd) {
      const config::RunConfig cfg = resolve(ablate_flags);
      const datagen::Dataset ds = datagen::load_dataset(ablate_data);
      std::vector<experiments::Variant> variants;
      for (const std::string& v : ablate_variants) variants.push_back(experiments::parse_variant(v));
      const std::vector<int64_t> seeds = config::parse_int_list(ablate_seeds);
      cfg.write_resolved(ablate_out);
      std::vector<experiments::AblationRow> rows;
      for (const auto& v : variants)
        for (int64_t s : seeds) {
          rows.push_back(experiments::ablation_run(v, static_cast<uint64_t>(s), cfg, ds));
          const auto& r = rows.back();
          std::cout << r.variant << " seed " << r.seed << " R@1 " << r.rank.r1 << " params " << r.params << '\n';
        }
      experiments::write_ablation_csv(fs::path(ablate_out) / "results.csv", rows);
      return kOk;
    }
    if (*grad_cmd) {
      const auto results = experiments::run_gradcheck(grad_selector, grad_seed);
      bool ok = true;
      std::ofstream csv;
      if (!grad_out.empty()) {
        fs::create_directories(grad_out);
        csv.open(fs::path(grad_out) / "gradcheck.csv");
        csv << "operation,max_rel_error,max_abs_error,coordinates,pass\n";
      }
      for (const auto& r : results) {
        const bool pass = r.max_relative_error < experiments::kGradTolerance;
        ok = ok && pass;
        std::cout << std::left << std::setw(18) << r.name << " max_rel " << std::scientific << std::setprecision(3)
                  << r.max_relative_error << " coords " << std::defaultfloat << r.coordinates << ' '
                  << (pass ? "ok" : "FAIL (" + r.worst_input + ")") << '\n';
        if (csv.is_open())
          csv << r.name << ',' << r.max_relative_error << ',' << r.max_absolute_error << ',' << r.coordinates << ','
              << (pass ? 1 : 0) << '\n';
      }
      return ok ? kOk : kFailure;
    }
    if (*sweep_cmd) {
      const config::RunConfig cfg = resolve(sweep_flags);
      const datagen::Dataset ds = datagen::load_dataset(sweep_data);
      const std::vector<int64_t> values = config::parse_int_list(sweep_values);
      if (values.empty()) throw experiments::UsageError("--values is empty");
      cfg.write_resolved(sweep_out);
      const auto rows = experiments::sweep_k(values, cfg, ds);
      experiments::write_k_csv(fs::path(sweep_out) / "k_sweep.csv", rows);
      experiments::write_k_svg(fs::path(sweep_out) / "k_sweep.svg", rows);
      for (const auto& r : rows) std::cout << "K=" << r.k << " R@1 " << r.r1 << '\n';
      return kOk;
    }
  } catch (const experiments::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
