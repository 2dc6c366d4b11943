// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace manet::config {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"preset", "toy"},
      {"seed", "1"},
      {"threads", "0"},
      // model
      {"stage_channels", "32,64"},
      {"kernel", "3"},
      {"stride", "2"},
      {"embed_dim", "32"},
      {"global_dim", "64"},
      {"local_dim", "32"},
      {"centers", "6"},
      {"r1", "8"},
      {"r2", "16"},
      {"r3", "4"},
      {"se_ratio", "4"},
      {"ga", "true"},
      {"ila", "true"},
      {"rgl", "true"},
      {"caf", "true"},
      {"assignment", "relation"},
      {"center_init", "normal"},
      // training; empty means "from preset"
      {"epochs", ""},
      {"identities_per_batch", ""},
      {"samples_per_identity", ""},
      {"lr_backbone", ""},
      {"lr_rest", ""},
      {"decay_epochs", ""},
      {"decay_factor", ""},
      {"warmup_epochs", ""},
      {"flip_probability", ""},
      // loss
      {"alpha1", "0.2"},
      {"alpha2", "0.2"},
      {"alpha3", "0.2"},
      {"lambda1", "0.1"},
      {"lambda2", "1"},
  };
  return d;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string join(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    size_t used = 0;
    int64_t v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("not an integer list: '" + text + "'");
    out.push_back(v);
  }
  return out;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, v] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

bool RunConfig::known(const std::string& key) { return std::find(keys().begin(), keys().end(), key) != keys().end(); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!known(key)) throw ConfigError(origin + ":" + std::to_string(n) + ": unknown config key '" + key + "'");
    set(key, trim(line.substr(eq + 1)));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

void RunConfig::merge_environment() {
  for (const std::string& key : keys()) {
    std::string name = "MANETLAB_" + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (const char* v = std::getenv(name.c_str())) set(key, v);
  }
}

void RunConfig::merge_assignment(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  set(key, trim(assignment.substr(eq + 1)));
}

int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": not a boolean: '" + s + "'");
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& key) const { return parse_int_list(get(key)); }

model::ModelConfig RunConfig::model_config(int64_t vocab_size, int64_t classes, int64_t length) const {
  model::ModelConfig m;
  m.visual.stage_channels = get_int_list("stage_channels");
  if (m.visual.stage_channels.empty()) throw ConfigError("stage_channels must list at least one stage");
  m.visual.kernel = get_int("kernel");
  m.visual.stride = get_int("stride");
  m.text.embed_dim = get_int("embed_dim");
  m.text.hidden = m.visual.out_channels();
  m.vocab_size = vocab_size;
  m.classes = classes;
  m.length = length;
  m.global_dim = get_int("global_dim");
  m.local_dim = get_int("local_dim");
  m.centers = get_int("centers");
  m.r1 = get_int("r1");
  m.r2 = get_int("r2");
  m.r3 = get_int("r3");
  m.se_ratio = get_int("se_ratio");
  m.ga = get_bool("ga");
  m.ila = get_bool("ila");
  m.rgl = get_bool("rgl");
  m.caf = get_bool("caf");
  m.assignment = alignment::parse_assignment(get("assignment"));
  m.center_init = alignment::parse_center_init(get("center_init"));
  m.seed = static_cast<uint64_t>(get_int("seed"));
  return m;
}

training::TrainConfig RunConfig::train_config() const {
  const std::string& preset = get("preset");
  training::TrainConfig t;
  if (preset == "toy")
    t = training::toy_schedule();
  else if (preset == "paper_schedule")
    t = training::paper_schedule();
  else
    throw ConfigError("unknown preset '" + preset + "' (toy | paper_schedule)");
  auto has = [this](const char* k) { return !get(k).empty(); };
  if (has("epochs")) t.epochs = get_int("epochs");
  if (has("identities_per_batch")) t.identities_per_batch = get_int("identities_per_batch");
  if (has("samples_per_identity")) t.samples_per_identity = get_int("samples_per_identity");
  if (has("lr_backbone")) t.lr_backbone = get_double("lr_backbone");
  if (has("lr_rest")) t.lr_rest = get_double("lr_rest");
  if (has("decay_epochs")) t.decay_epochs = get_int_list("decay_epochs");
  if (has("decay_factor")) t.decay_factor = get_double("decay_factor");
  if (has("warmup_epochs")) t.warmup_epochs = get_int("warmup_epochs");
  if (has("flip_probability")) t.flip_probability = get_double("flip_probability");
  t.seed = static_cast<uint64_t>(get_int("seed"));
  t.loss.alpha1 = get_double("alpha1");
  t.loss.alpha2 = get_double("alpha2");
  t.loss.alpha3 = get_double("alpha3");
  t.loss.lambda1 = get_double("lambda1");
  t.loss.lambda2 = get_double("lambda2");
  if (t.loss.alpha1 < 0 || t.loss.alpha2 < 0 || t.loss.alpha3 < 0) throw ConfigError("margins must be >= 0");
  t.validate();
  return t;
}

std::string RunConfig::render() const {
  // Preset-derived values are written out so the file alone reproduces the run.
  const training::TrainConfig t = train_config();
  std::map<std::string, std::string> v = values_;
  v["epochs"] = std::to_string(t.epochs);
  v["identities_per_batch"] = std::to_string(t.identities_per_batch);
  v["samples_per_identity"] = std::to_string(t.samples_per_identity);
  v["lr_backbone"] = fmt(t.lr_backbone);
  v["lr_rest"] = fmt(t.lr_rest);
  v["decay_epochs"] = join(t.decay_epochs);
  v["decay_factor"] = fmt(t.decay_factor);
  v["warmup_epochs"] = std::to_string(t.warmup_epochs);
  v["flip_probability"] = fmt(t.flip_probability);
  std::ostringstream os;
  for (const std::string& k : keys()) os << k << " = " << v[k] << '\n';
  return os.str();
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved");
  out << render();
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.resolved").string());
}

}  // namespace manet::config
