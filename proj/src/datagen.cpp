// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "manetlab/array_io.hpp"

namespace manet::datagen {
namespace {

struct Rect {
  int64_t y0, y1, x0, x1;  // half-open, in 48x16 template units
};

// Head, top, bottom, shoes; the accessory bag sits on the top region.
constexpr std::array<Rect, 4> kBodyParts = {{
    {3, 11, 5, 11},
    {11, 25, 3, 13},
    {25, 41, 4, 12},
    {41, 45, 4, 12},
}};
constexpr Rect kBag = {14, 22, 10, 13};
constexpr int64_t kTemplateH = 48;
constexpr int64_t kTemplateW = 16;

Rect scale_rect(const Rect& r, const Geometry& g) {
  return {r.y0 * g.height / kTemplateH, r.y1 * g.height / kTemplateH, r.x0 * g.width / kTemplateW,
          r.x1 * g.width / kTemplateW};
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void fill_background(Tensor& img, int background_id, std::mt19937_64& rng, const Geometry& g) {
  std::mt19937_64 pattern_rng(derive_seed(0xB4C6'0000ULL, static_cast<uint64_t>(background_id), 0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 3> base{u(pattern_rng), u(pattern_rng), u(pattern_rng)};
  for (int64_t c = 0; c < g.channels; ++c)
    for (int64_t i = 0; i < g.height * g.width; ++i) img[static_cast<size_t>(c * g.height * g.width + i)] = base[c % 3];
  // Clutter: random colored blocks, some of them palette colors.
  const int blocks = 6;
  for (int b = 0; b < blocks; ++b) {
    std::array<double, 3> col;
    if (u(pattern_rng) < 0.5) {
      const auto& p = palette()[static_cast<size_t>(pattern_rng() % palette().size())].rgb;
      col = p;
    } else {
      col = {u(pattern_rng), u(pattern_rng), u(pattern_rng)};
    }
    const int64_t h = 2 + static_cast<int64_t>(pattern_rng() % static_cast<uint64_t>(std::max<int64_t>(1, g.height / 4)));
    const int64_t w = 1 + static_cast<int64_t>(pattern_rng() % static_cast<uint64_t>(std::max<int64_t>(1, g.width / 3)));
    const int64_t y0 = static_cast<int64_t>(pattern_rng() % static_cast<uint64_t>(g.height));
    const int64_t x0 = static_cast<int64_t>(pattern_rng() % static_cast<uint64_t>(g.width));
    for (int64_t y = y0; y < std::min(g.height, y0 + h); ++y)
      for (int64_t x = x0; x < std::min(g.width, x0 + w); ++x)
        for (int64_t c = 0; c < g.channels; ++c) img[static_cast<size_t>((c * g.height + y) * g.width + x)] = col[c % 3];
  }
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  for (double& v : img.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
}

}  // namespace

const std::vector<Color>& palette() {
  static const std::vector<Color> p = {
      {"black", {0.08, 0.08, 0.08}}, {"white", {0.95, 0.95, 0.95}}, {"red", {0.85, 0.12, 0.12}},
      {"green", {0.12, 0.70, 0.20}}, {"blue", {0.12, 0.25, 0.85}},  {"yellow", {0.92, 0.85, 0.12}},
      {"gray", {0.50, 0.50, 0.50}},  {"purple", {0.55, 0.18, 0.70}},
  };
  return p;
}

const std::array<std::string, kSlots>& slot_nouns() {
  static const std::array<std::string, kSlots> n = {"hair", "shirt", "pants", "shoes", "bag"};
  return n;
}

namespace {

const std::vector<std::vector<std::string>>& openers() {
  static const std::vector<std::vector<std::string>> o = {
      {"a", "person"}, {"the", "pedestrian"}, {"this", "person"}, {"a", "pedestrian"}};
  return o;
}

const std::vector<std::string>& connectors() {
  static const std::vector<std::string> c = {"and", "with"};
  return c;
}

const std::vector<std::string>& distractors() {
  static const std::vector<std::string> d = {"also", "is", "walking", "wearing", "carrying"};
  return d;
}

}  // namespace

const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words = [] {
    std::set<std::string> s;
    for (const auto& o : openers()) s.insert(o.begin(), o.end());
    s.insert(connectors().begin(), connectors().end());
    s.insert(distractors().begin(), distractors().end());
    s.insert(slot_nouns().begin(), slot_nouns().end());
    s.insert("a");
    return std::vector<std::string>(s.begin(), s.end());
  }();
  return words;
}

int64_t attribute_space() {
  int64_t n = 1;
  for (int s = 0; s < kSlots; ++s) n *= static_cast<int64_t>(palette().size());
  return n;
}

std::vector<IdentitySpec> gen_identities(uint64_t seed, int64_t num_ids) {
  if (num_ids < 0) throw std::invalid_argument("num_ids must be non-negative");
  if (num_ids > attribute_space()) {
    throw CapacityError("requested " + std::to_string(num_ids) + " identities but the attribute space holds only " +
                        std::to_string(attribute_space()));
  }
  std::mt19937_64 rng(derive_seed(seed, 0, 0x1D));
  const auto colors = static_cast<uint64_t>(palette().size());
  std::unordered_set<int64_t> used;
  std::vector<IdentitySpec> out;
  out.reserve(static_cast<size_t>(num_ids));
  while (static_cast<int64_t>(out.size()) < num_ids) {
    const int64_t code = static_cast<int64_t>(rng() % static_cast<uint64_t>(attribute_space()));
    if (!used.insert(code).second) continue;
    IdentitySpec spec;
    spec.id = static_cast<int64_t>(out.size());
    int64_t rest = code;
    for (int s = 0; s < kSlots; ++s) {
      spec.attributes[static_cast<size_t>(s)] = static_cast<int>(rest % static_cast<int64_t>(colors));
      rest /= static_cast<int64_t>(colors);
    }
    out.push_back(spec);
  }
  return out;
}

Tensor body_mask(const Geometry& g) {
  Tensor mask(Shape{g.height, g.width});
  for (const Rect& part : kBodyParts) {
    const Rect r = scale_rect(part, g);
    for (int64_t y = r.y0; y < r.y1; ++y)
      for (int64_t x = r.x0; x < r.x1; ++x) mask.at(y, x) = 1.0;
  }
  return mask;
}

RenderedImage render_image(const IdentitySpec& spec, const Nuisance& nuisance, std::mt19937_64& rng,
                           const Geometry& g) {
  for (double t : nuisance.tint)
    if (t < 0.5 || t > 1.5) throw std::invalid_argument("tint components must lie in [0.5, 1.5]");
  if (nuisance.brightness < 0.5 || nuisance.brightness > 1.5)
    throw std::invalid_argument("brightness must lie in [0.5, 1.5]");
  for (int a : spec.attributes)
    if (a < 0 || a >= static_cast<int>(palette().size())) throw std::invalid_argument("attribute outside palette");

  RenderedImage out{Tensor(Shape{g.channels, g.height, g.width}), body_mask(g)};
  fill_background(out.image, nuisance.background_id, rng, g);

  auto paint = [&](const Rect& templ, int color) {
    const Rect r = scale_rect(templ, g);
    const auto& rgb = palette()[static_cast<size_t>(color)].rgb;
    for (int64_t c = 0; c < g.channels; ++c) {
      const double v = std::clamp(rgb[c % 3] * nuisance.tint[c % 3] * nuisance.brightness, 0.0, 1.0);
      for (int64_t y = r.y0; y < r.y1; ++y)
        for (int64_t x = r.x0; x < r.x1; ++x) out.image[static_cast<size_t>((c * g.height + y) * g.width + x)] = v;
    }
  };
  for (int s = 0; s < 4; ++s) paint(kBodyParts[static_cast<size_t>(s)], spec.attributes[static_cast<size_t>(s)]);
  paint(kBag, spec.attributes[kAccessory]);
  // Stored as float32 on disk; keep the in-memory copy on the same grid.
  for (double& v : out.image.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

std::vector<std::string> caption_words(const IdentitySpec& spec, std::mt19937_64& rng) {
  std::array<int, kSlots> order{0, 1, 2, 3, 4};
  std::shuffle(order.begin(), order.end(), rng);
  const auto& opener = openers()[static_cast<size_t>(rng() % openers().size())];
  std::vector<std::string> words(opener.begin(), opener.end());
  for (int i = 0; i < kSlots; ++i) {
    const int slot = order[static_cast<size_t>(i)];
    words.push_back(i == 0 ? "with" : connectors()[static_cast<size_t>(rng() % connectors().size())]);
    const std::string& color = palette()[static_cast<size_t>(spec.attributes[static_cast<size_t>(slot)])].name;
    if (slot == kAccessory) words.emplace_back("a");
    words.push_back(color);
    words.push_back(slot_nouns()[static_cast<size_t>(slot)]);
  }
  const int extra = static_cast<int>(rng() % 3);
  for (int i = 0; i < extra; ++i) {
    const size_t pos = 2 + static_cast<size_t>(rng() % (words.size() - 1));
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos),
                 distractors()[static_cast<size_t>(rng() % distractors().size())]);
  }
  return words;
}

Vocabulary::Vocabulary() : words_{kPaddingWord} { index_[kPaddingWord] = kPadding; }

Vocabulary::Vocabulary(const std::vector<std::string>& words_without_padding) : Vocabulary() {
  for (const std::string& w : words_without_padding) {
    if (w == kPaddingWord || index_.count(w)) throw std::invalid_argument("duplicate vocabulary word '" + w + "'");
    index_[w] = static_cast<int64_t>(words_.size());
    words_.push_back(w);
  }
}

std::optional<int64_t> Vocabulary::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int64_t> freq;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) ++freq[w];
  std::vector<std::string> kept;
  for (const auto& [w, n] : freq)
    if (n > 2 && w != Vocabulary::kPaddingWord) kept.push_back(w);
  return Vocabulary(kept);
}

TokenizedCaption pad_or_truncate(std::vector<int64_t> ids, int64_t length) {
  if (length <= 0) throw std::invalid_argument("caption length must be positive");
  TokenizedCaption out;
  out.valid_length = std::min<int64_t>(length, static_cast<int64_t>(ids.size()));
  ids.resize(static_cast<size_t>(length), Vocabulary::kPadding);
  out.tokens = std::move(ids);
  return out;
}

TokenizedCaption tokenize(const std::vector<std::string>& words, const Vocabulary& vocab, int64_t length) {
  std::set<std::string> required;
  for (const auto& c : palette()) required.insert(c.name);
  required.insert(slot_nouns().begin(), slot_nouns().end());
  std::vector<int64_t> ids;
  for (const auto& w : words) {
    if (auto id = vocab.id_of(w)) {
      ids.push_back(*id);
    } else if (required.count(w)) {
      throw VocabularyError("vocabulary is missing attribute word '" + w + "'");
    }
  }
  return pad_or_truncate(std::move(ids), length);
}

TokenizedCaption render_caption(const IdentitySpec& spec, std::mt19937_64& rng, int64_t length,
                                const Vocabulary& vocab) {
  if (length < 5) throw std::invalid_argument("caption length must be at least 5");
  return tokenize(caption_words(spec, rng), vocab, length);
}

std::vector<const Sample*> Dataset::split(bool holdout) const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples)
    if (s.holdout == holdout) out.push_back(&s);
  return out;
}

uint64_t derive_seed(uint64_t seed, uint64_t index, uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ (stream * 0xD1B54A32D192ED03ULL));
}

Nuisance sample_nuisance(const DatasetConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> tint(config.tint_min, config.tint_max);
  std::uniform_real_distribution<double> bright(config.brightness_min, config.brightness_max);
  Nuisance n;
  n.background_id = static_cast<int>(rng() % static_cast<uint64_t>(std::max(1, config.num_backgrounds)));
  for (double& t : n.tint) t = tint(rng);
  n.brightness = bright(rng);
  return n;
}

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.images_per_id <= 0) throw std::invalid_argument("images_per_id must be positive");
  if (config.holdout_per_id < 0 || config.holdout_per_id >= config.images_per_id)
    throw std::invalid_argument("holdout_per_id must be in [0, images_per_id)");
  Dataset ds;
  ds.config = config;
  const auto ids = gen_identities(config.seed, config.num_ids);
  const int64_t total = config.num_ids * config.images_per_id;
  ds.samples.resize(static_cast<size_t>(total));
  std::vector<std::vector<std::string>> words(static_cast<size_t>(total));

#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(i)];
    s.index = i;
    s.identity = ids[static_cast<size_t>(i / config.images_per_id)];
    s.holdout = (i % config.images_per_id) >= config.images_per_id - config.holdout_per_id;
    std::mt19937_64 nuisance_rng(derive_seed(config.seed, static_cast<uint64_t>(i), 1));
    std::mt19937_64 render_rng(derive_seed(config.seed, static_cast<uint64_t>(i), 2));
    std::mt19937_64 caption_rng(derive_seed(config.seed, static_cast<uint64_t>(i), 3));
    s.nuisance = sample_nuisance(config, nuisance_rng);
    RenderedImage r = render_image(s.identity, s.nuisance, render_rng, config.geometry);
    s.image = std::move(r.image);
    s.mask = std::move(r.mask);
    words[static_cast<size_t>(i)] = caption_words(s.identity, caption_rng);
  }

  std::vector<std::vector<std::string>> train_corpus;
  for (int64_t i = 0; i < total; ++i)
    if (!ds.samples[static_cast<size_t>(i)].holdout) train_corpus.push_back(words[static_cast<size_t>(i)]);
  if (train_corpus.empty()) throw std::invalid_argument("dataset has no training captions");
  ds.vocab = build_vocab(train_corpus);
  for (int64_t i = 0; i < total; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(i)];
    TokenizedCaption tc = tokenize(words[static_cast<size_t>(i)], ds.vocab, config.caption_length);
    s.tokens = std::move(tc.tokens);
    s.valid_length = tc.valid_length;
  }
  return ds;
}

namespace {

std::string sample_file(const char* dir, int64_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%06lld.f32", dir, static_cast<long long>(index));
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const DatasetConfig& c = ds.config;
  nlohmann::ordered_json meta = {
      {"seed", c.seed},
      {"num_ids", c.num_ids},
      {"images_per_id", c.images_per_id},
      {"caption_length", c.caption_length},
      {"holdout_per_id", c.holdout_per_id},
      {"num_backgrounds", c.num_backgrounds},
      {"tint_range", {c.tint_min, c.tint_max}},
      {"brightness_range", {c.brightness_min, c.brightness_max}},
      {"geometry", {c.geometry.channels, c.geometry.height, c.geometry.width}},
  };
  std::ofstream(dir / "dataset.json") << meta.dump(2) << '\n';

  std::ofstream vocab(dir / "vocab.txt");
  for (const auto& w : ds.vocab.words()) vocab << w << '\n';

  std::ofstream manifest(dir / "manifest.jsonl");
  for (const Sample& s : ds.samples) {
    const std::string img = sample_file("images", s.index);
    const std::string msk = sample_file("masks", s.index);
    io::write_f32_array(dir / img, s.image);
    io::write_f32_array(dir / msk, s.mask);
    nlohmann::ordered_json rec = {
        {"id", s.index},
        {"identity", s.identity.id},
        {"attributes", s.identity.attributes},
        {"split", s.holdout ? "test" : "train"},
        {"image", img},
        {"mask", msk},
        {"tokens", s.tokens},
        {"valid_length", s.valid_length},
        {"nuisance",
         {{"background_id", s.nuisance.background_id},
          {"tint", s.nuisance.tint},
          {"brightness", s.nuisance.brightness}}},
    };
    manifest << rec.dump() << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw std::runtime_error("no dataset.json in " + dir.string());
  const auto meta = nlohmann::json::parse(meta_in);
  DatasetConfig& c = ds.config;
  c.seed = meta.at("seed").get<uint64_t>();
  c.num_ids = meta.at("num_ids").get<int64_t>();
  c.images_per_id = meta.at("images_per_id").get<int64_t>();
  c.caption_length = meta.at("caption_length").get<int64_t>();
  c.holdout_per_id = meta.at("holdout_per_id").get<int64_t>();
  c.num_backgrounds = meta.at("num_backgrounds").get<int>();
  c.tint_min = meta.at("tint_range")[0].get<double>();
  c.tint_max = meta.at("tint_range")[1].get<double>();
  c.brightness_min = meta.at("brightness_range")[0].get<double>();
  c.brightness_max = meta.at("brightness_range")[1].get<double>();
  c.geometry = {meta.at("geometry")[0].get<int64_t>(), meta.at("geometry")[1].get<int64_t>(),
                meta.at("geometry")[2].get<int64_t>()};

  std::ifstream vocab_in(dir / "vocab.txt");
  std::vector<std::string> words;
  for (std::string line; std::getline(vocab_in, line);)
    if (!line.empty()) words.push_back(line);
  if (words.empty() || words.front() != Vocabulary::kPaddingWord)
    throw std::runtime_error("vocab.txt must start with the padding word");
  ds.vocab = Vocabulary(std::vector<std::string>(words.begin() + 1, words.end()));

  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("no manifest.jsonl in " + dir.string());
  for (std::string line; std::getline(manifest, line);) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    Sample s;
    s.index = rec.at("id").get<int64_t>();
    s.identity.id = rec.at("identity").get<int64_t>();
    s.identity.attributes = rec.at("attributes").get<std::array<int, kSlots>>();
    s.holdout = rec.at("split").get<std::string>() == "test";
    s.image = io::read_f32_array(dir / rec.at("image").get<std::string>());
    s.mask = io::read_f32_array(dir / rec.at("mask").get<std::string>());
    s.tokens = rec.at("tokens").get<std::vector<int64_t>>();
    s.valid_length = rec.at("valid_length").get<int64_t>();
    const auto& n = rec.at("nuisance");
    s.nuisance.background_id = n.at("background_id").get<int>();
    s.nuisance.tint = n.at("tint").get<std::array<double, 3>>();
    s.nuisance.brightness = n.at("brightness").get<double>();
    for (int64_t t : s.tokens)
      if (t < 0 || t >= ds.vocab.size()) throw std::runtime_error("manifest token outside vocabulary");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace manet::datagen
