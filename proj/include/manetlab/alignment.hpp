// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Implicit local alignment aggregates every pixel/word of either modality
// onto K topic centers through one shared relation unit; global alignment
// max-pools each modality into the joint space.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "manetlab/autograd.hpp"
#include "manetlab/nn.hpp"
#include "manetlab/suppression.hpp"

namespace manet::alignment {

enum class Assignment { kRelation, kInnerProduct };

enum class CenterInit {
  kNormal,
  kUniform,
  kKaimingNormal,
  kXavierNormal,
  kZeros,
  kOnes,
  kIdentity,
  kConstant,
  kOrthogonal,
};

Assignment parse_assignment(const std::string& s);
std::string to_string(Assignment a);
CenterInit parse_center_init(const std::string& s);
std::string to_string(CenterInit c);

Tensor make_centers(int64_t k, int64_t dim, CenterInit scheme, std::mt19937_64& rng);

// Rows of caption positions below each valid length, with segment offsets.
struct ValidRows {
  std::vector<int64_t> rows;
  Offsets offsets;
};
ValidRows valid_rows(int64_t length, std::span<const int64_t> valid_lengths);

// Which modality's assignments see the live centers; the other side sees a
// detached copy. Used to isolate each modality's gradient on the centers.
enum class CenterRoute { kBoth, kImageOnly, kTextOnly };

enum class Modality { kImage, kText };

struct IlaPair {
  Var image;  // [B_image, K*d_c]
  Var text;   // [B_text, K*d_c]
};

struct IlaConfig {
  int64_t channels = 64;  // C
  int64_t dim = 32;       // d_c
  int64_t centers = 6;    // K
  int64_t r3 = 4;
  Assignment assignment = Assignment::kRelation;
  CenterInit center_init = CenterInit::kNormal;
};

class ImplicitLocalAlignment {
 public:
  ImplicitLocalAlignment() = default;
  ImplicitLocalAlignment(const IlaConfig& config, std::mt19937_64& rng);

  // L2-normalize each position over channels, then apply W_s: [R, C] -> [R, d_c].
  Var project_shared(const Var& rows) const;
  // Assignments of every row to every center: [R, K*d_c], block j holds a_{i,j}.
  Var assign(const Var& z, NormMode mode);
  // As assign against an explicit center bank [K, d_c]: the live centers or
  // a detached copy of them.
  Var assign_to(const Var& z, const Var& bank, NormMode mode);
  // v_j = sum_i a_{i,j} * z_i per segment -> [S, K*d_c] in center order.
  Var aggregate(const Var& z, const Var& assignments, const Offsets& offsets) const;
  // project_shared + assign + aggregate. Weights are shared by both
  // modalities; the row batch norms keep separate statistics per modality.
  Var forward(const Var& rows, const Offsets& offsets, NormMode mode, Modality modality = Modality::kImage);
  IlaPair forward_pair(const Var& image_rows, const Offsets& image_offsets, const Var& text_rows,
                       const Offsets& text_offsets, NormMode mode, CenterRoute route = CenterRoute::kBoth);
  // Single assignment vector a_{i,j} for z: [d_c] against center j.
  Var assign_one(const Var& z, int64_t center, NormMode mode);

  const IlaConfig& config() const { return config_; }
  void register_params(ParamRegistry& reg);

  Var centers;  // [K, d_c]
  Var w_s;      // [d_c, C]
  suppression::RelationUnit unit;
  // Text-side running statistics of unit.bn_theta and unit.bn_out.
  BatchNormState text_theta;
  BatchNormState text_out;

 private:
  Var forward_with(const Var& rows, const Offsets& offsets, const Var& bank, NormMode mode, Modality modality);

  IlaConfig config_;
};

struct GlobalConfig {
  int64_t channels = 64;
  int64_t dim = 64;  // d_g
};

class GlobalAlignment {
 public:
  GlobalAlignment() = default;
  GlobalAlignment(const GlobalConfig& config, std::mt19937_64& rng);

  // v^g = GMP(W_g^image F^): project every position, then max over positions.
  Var image(const Var& rows, const Offsets& offsets) const;
  // t^g = W_g^text GMP(E): max over valid positions, then project.
  Var text(const Var& rows, int64_t length, std::span<const int64_t> valid_lengths) const;

  void register_params(ParamRegistry& reg);

  Var w_image;  // [d_g, C]
  Var w_text;   // [d_g, C]
};

// Baseline global alignment: max-pool both modalities, then one shared 1x1
// projection.
class SharedGlobalHead {
 public:
  SharedGlobalHead() = default;
  SharedGlobalHead(const GlobalConfig& config, std::mt19937_64& rng);

  Var image(const Var& rows, const Offsets& offsets) const;
  Var text(const Var& rows, int64_t length, std::span<const int64_t> valid_lengths) const;
  void register_params(ParamRegistry& reg);

  Var w;  // [d_g, C]
};

}  // namespace manet::alignment
