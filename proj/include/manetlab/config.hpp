// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key = value run configuration. Later sources override earlier ones:
// built-in defaults, config file, MANETLAB_* environment, command-line flags.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "manetlab/datagen.hpp"
#include "manetlab/model.hpp"
#include "manetlab/training.hpp"

namespace manet::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::string>& keys();
  static bool known(const std::string& key);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool explicitly_set(const std::string& key) const { return explicit_.count(key) > 0; }

  // Lines of "key = value"; '#' starts a comment.
  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& origin);
  // MANETLAB_<KEY in upper case>.
  void merge_environment();
  // "key=value".
  void merge_assignment(const std::string& assignment);

  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& key) const;

  model::ModelConfig model_config(int64_t vocab_size, int64_t classes, int64_t length) const;
  training::TrainConfig train_config() const;

  std::string render() const;
  void write_resolved(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

std::vector<int64_t> parse_int_list(const std::string& text);

}  // namespace manet::config
