// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-run drivers: gradient suite, component ablation, topic-count sweep.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "manetlab/config.hpp"
#include "manetlab/datagen.hpp"
#include "manetlab/gradcheck.hpp"
#include "manetlab/retrieval.hpp"

namespace manet::experiments {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kGradTolerance = 1e-4;

// Operation names in suite order.
const std::vector<std::string>& gradcheck_operations();
// selector: "all", a module ("suppression", "alignment", "objectives") or
// one operation name.
std::vector<GradCheckResult> run_gradcheck(const std::string& selector, uint64_t seed);

struct Variant {
  std::string name;
  bool ga = false;
  bool ila = false;
  bool rgl = false;
  bool caf = false;
};

// baseline | ga | ila | ga+ila | ga+ila+rgl | ga+ila+caf | full
Variant parse_variant(const std::string& text);
const std::vector<Variant>& standard_variants();

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  retrieval::RankMetrics rank;
  int64_t params = 0;
};

// Trains one variant and reports held-out metrics after the last epoch.
AblationRow ablation_run(const Variant& variant, uint64_t seed, const config::RunConfig& base,
                         const datagen::Dataset& dataset, const std::filesystem::path& run_dir = {});

const char* ablation_header();
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

struct KRow {
  int64_t k = 0;
  double r1 = 0.0;
};

std::vector<KRow> sweep_k(const std::vector<int64_t>& values, const config::RunConfig& base,
                          const datagen::Dataset& dataset);
void write_k_csv(const std::filesystem::path& path, const std::vector<KRow>& rows);
void write_k_svg(const std::filesystem::path& path, const std::vector<KRow>& rows);

}  // namespace manet::experiments
