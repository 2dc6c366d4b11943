// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two binary formats, both little-endian:
//
// Raw array file (dataset images and masks):
//   char[8] "MANETF32" | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//
// Named-array archive (checkpoints, embedding dumps):
//   char[8] "MANETARC" | u32 version (1)
//   u64 attribute_count, then per attribute: u32 len, key bytes, u32 len, value bytes
//   u64 array_count, then per array: u32 len, name bytes, u32 rank, u64 dims[rank],
//   f64 data[prod(dims)]

#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "manetlab/tensor.hpp"

namespace manet::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_f32_array(const std::filesystem::path& path, const Tensor& t);
Tensor read_f32_array(const std::filesystem::path& path);

struct Archive {
  std::map<std::string, std::string> attributes;
  // Insertion order is preserved on disk.
  std::vector<std::pair<std::string, Tensor>> arrays;

  void put(std::string name, Tensor t) { arrays.emplace_back(std::move(name), std::move(t)); }
  const Tensor* find(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace manet::io
