// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic person-search corpus: identities are tuples of palette colors,
// images render a fixed body template over cluttered backgrounds with a
// multiplicative tint, and captions name every attribute in shuffled order.
// Captions never see the nuisance draw.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "manetlab/tensor.hpp"

namespace manet::datagen {

enum Slot : int { kHead = 0, kTop = 1, kBottom = 2, kShoes = 3, kAccessory = 4 };
inline constexpr int kSlots = 5;

struct Color {
  std::string name;
  std::array<double, 3> rgb;
};

const std::vector<Color>& palette();
// Noun each slot attaches to in captions ("hair", "shirt", ...).
const std::array<std::string, kSlots>& slot_nouns();
// Non-color words the caption templates can emit.
const std::vector<std::string>& template_words();
int64_t attribute_space();

struct IdentitySpec {
  int64_t id = 0;
  std::array<int, kSlots> attributes{};

  bool operator==(const IdentitySpec&) const = default;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<IdentitySpec> gen_identities(uint64_t seed, int64_t num_ids);

struct Nuisance {
  int background_id = 0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
  double brightness = 1.0;
};

struct Geometry {
  int64_t channels = 3;
  int64_t height = 48;
  int64_t width = 16;
};

// Binary [H,W] mask of the body template (accessory included).
Tensor body_mask(const Geometry& geometry = {});

struct RenderedImage {
  Tensor image;  // [channels, H, W] in [0,1]
  Tensor mask;   // [H, W] in {0,1}
};

RenderedImage render_image(const IdentitySpec& spec, const Nuisance& nuisance, std::mt19937_64& rng,
                           const Geometry& geometry = {});

// Caption as words before tokenization.
std::vector<std::string> caption_words(const IdentitySpec& spec, std::mt19937_64& rng);

class Vocabulary {
 public:
  static constexpr int64_t kPadding = 0;
  static constexpr const char* kPaddingWord = "<pad>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words_without_padding);

  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  std::optional<int64_t> id_of(const std::string& word) const;
  const std::string& word(int64_t id) const { return words_.at(static_cast<size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int64_t> index_;
};

// Words with corpus frequency > 2, sorted, after the padding id.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus);

struct TokenizedCaption {
  std::vector<int64_t> tokens;  // length L, zero-padded
  int64_t valid_length = 0;
};

// First L ids kept; shorter sequences are zero-filled.
TokenizedCaption pad_or_truncate(std::vector<int64_t> ids, int64_t length);

// Out-of-vocabulary function words are dropped; a missing color or noun throws.
TokenizedCaption tokenize(const std::vector<std::string>& words, const Vocabulary& vocab, int64_t length);

TokenizedCaption render_caption(const IdentitySpec& spec, std::mt19937_64& rng, int64_t length,
                                const Vocabulary& vocab);

struct DatasetConfig {
  uint64_t seed = 7;
  int64_t num_ids = 32;
  int64_t images_per_id = 8;
  int64_t caption_length = 24;
  int64_t holdout_per_id = 2;
  int num_backgrounds = 8;
  double tint_min = 0.8;
  double tint_max = 1.2;
  double brightness_min = 0.8;
  double brightness_max = 1.2;
  Geometry geometry;
};

struct Sample {
  int64_t index = 0;
  IdentitySpec identity;
  Tensor image;
  Tensor mask;
  std::vector<int64_t> tokens;
  int64_t valid_length = 0;
  Nuisance nuisance;
  bool holdout = false;
};

struct Dataset {
  DatasetConfig config;
  Vocabulary vocab;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(bool holdout) const;
};

// Stream-separated per-sample seed (splitmix64 of seed, index, stream).
uint64_t derive_seed(uint64_t seed, uint64_t index, uint64_t stream);
Nuisance sample_nuisance(const DatasetConfig& config, std::mt19937_64& rng);

Dataset generate_dataset(const DatasetConfig& config);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace manet::datagen
