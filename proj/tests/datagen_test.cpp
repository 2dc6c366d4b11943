// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "manetlab/datagen.hpp"

using namespace manet;
using namespace manet::datagen;
namespace fs = std::filesystem;

namespace {

double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetConfig small_config() {
  DatasetConfig c;
  c.num_ids = 6;
  c.images_per_id = 4;
  c.holdout_per_id = 1;
  return c;
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("gen_identities: empty, deterministic, distinct, bounded") {
    CHECK(gen_identities(7, 0).empty());
    CHECK(gen_identities(7, 50) == gen_identities(7, 50));
    const auto four = gen_identities(7, 4);
    REQUIRE(four.size() == 4);
    for (size_t i = 0; i < four.size(); ++i) {
      CHECK(four[i].id == static_cast<int64_t>(i));
      for (size_t j = i + 1; j < four.size(); ++j) CHECK(four[i].attributes != four[j].attributes);
      for (int a : four[i].attributes) CHECK((a >= 0 && a < static_cast<int>(palette().size())));
    }
    CHECK(gen_identities(8, 10) != gen_identities(7, 10));
  }

  TEST_CASE("gen_identities beyond the attribute space is a capacity error") {
    CHECK_THROWS_AS(gen_identities(7, attribute_space() + 1), CapacityError);
  }

  TEST_CASE("mask fraction of the default body template") {
    const Tensor m = body_mask();
    int64_t on = 0;
    for (double v : m.values()) on += v == 1.0;
    CHECK(on == 348);
    CHECK(static_cast<double>(on) / static_cast<double>(m.size()) == 0.453125);
    // contiguous vertical extent, centered horizontally
    for (int64_t y = 3; y < 45; ++y) {
      int64_t row = 0;
      for (int64_t x = 0; x < 16; ++x) row += m.at(y, x) == 1.0;
      CHECK(row > 0);
    }
  }

  TEST_CASE("identity nuisance paints raw palette colors on the mask") {
    const IdentitySpec spec{0, {2, 4, 1, 0, 5}};
    std::mt19937_64 rng(1);
    const RenderedImage r = render_image(spec, Nuisance{}, rng);
    // head pixel (5,7), shirt pixel (12,4), pants (30,6), shoes (42,5), bag (16,11)
    const std::vector<std::tuple<int64_t, int64_t, int>> probes = {
        {5, 7, 2}, {12, 4, 4}, {30, 6, 1}, {42, 5, 0}, {16, 11, 5}};
    for (auto [y, x, color] : probes)
      for (int64_t c = 0; c < 3; ++c)
        CHECK(r.image[(c * 48 + y) * 16 + x] == as_float(palette()[static_cast<size_t>(color)].rgb[c]));
  }

  TEST_CASE("tint and brightness scale on-mask pixels with clipping") {
    const IdentitySpec spec{0, {1, 1, 1, 1, 1}};  // white everywhere
    Nuisance n;
    n.tint = {1.2, 0.5, 1.0};
    n.brightness = 0.9;
    std::mt19937_64 rng(1);
    const RenderedImage r = render_image(spec, n, rng);
    CHECK(r.image[(0 * 48 + 30) * 16 + 6] == as_float(std::min(1.0, 0.95 * 1.2 * 0.9)));
    CHECK(r.image[(1 * 48 + 30) * 16 + 6] == as_float(0.95 * 0.5 * 0.9));
    Nuisance bad;
    bad.brightness = 1.6;
    CHECK_THROWS(render_image(spec, bad, rng));
    bad.brightness = 1.0;
    bad.tint = {0.4, 1.0, 1.0};
    CHECK_THROWS(render_image(spec, bad, rng));
  }

  TEST_CASE("two backgrounds differ only off the mask") {
    const IdentitySpec spec{0, {3, 2, 6, 0, 7}};
    Nuisance a, b;
    a.background_id = 1;
    b.background_id = 5;
    std::mt19937_64 r1(4), r2(4);
    const RenderedImage ia = render_image(spec, a, r1), ib = render_image(spec, b, r2);
    const Tensor m = body_mask();
    bool differs_off = false;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < 48 * 16; ++p) {
        const double va = ia.image[c * 768 + p], vb = ib.image[c * 768 + p];
        if (m[p] == 1.0)
          CHECK(va == vb);
        else
          differs_off = differs_off || va != vb;
      }
    CHECK(differs_off);
  }

  TEST_CASE("pad_or_truncate keeps the first L words and zero-fills") {
    std::vector<int64_t> long_ids(30);
    for (int i = 0; i < 30; ++i) long_ids[static_cast<size_t>(i)] = i + 1;
    const auto t = pad_or_truncate(long_ids, 24);
    CHECK(t.valid_length == 24);
    CHECK(t.tokens == std::vector<int64_t>(long_ids.begin(), long_ids.begin() + 24));
    const auto s = pad_or_truncate(std::vector<int64_t>(10, 3), 24);
    CHECK(s.valid_length == 10);
    for (int i = 10; i < 24; ++i) CHECK(s.tokens[static_cast<size_t>(i)] == 0);
  }

  TEST_CASE("build_vocab frequency rule") {
    const std::vector<std::vector<std::string>> corpus = {{"thrice", "twice"}, {"thrice", "twice"}, {"thrice", "once"}};
    const Vocabulary v = build_vocab(corpus);
    CHECK(v.id_of("thrice").has_value());
    CHECK_FALSE(v.id_of("twice").has_value());
    CHECK_FALSE(v.id_of("once").has_value());
    CHECK(v.id_of("<pad>") == 0);
    CHECK(build_vocab({{"a"}, {"b"}, {"c"}}).size() == 1);
    CHECK_THROWS(build_vocab({}));
  }

  TEST_CASE("render_caption names every attribute and needs a complete vocabulary") {
    const Dataset ds = generate_dataset(DatasetConfig{});
    const IdentitySpec spec{0, {0, 3, 5, 7, 2}};
    std::mt19937_64 rng(9);
    const auto tc = render_caption(spec, rng, 24, ds.vocab);
    std::multiset<int64_t> present(tc.tokens.begin(), tc.tokens.begin() + tc.valid_length);
    for (int s = 0; s < kSlots; ++s) {
      CHECK(present.count(*ds.vocab.id_of(palette()[static_cast<size_t>(spec.attributes[static_cast<size_t>(s)])].name)) > 0);
      CHECK(present.count(*ds.vocab.id_of(slot_nouns()[static_cast<size_t>(s)])) > 0);
    }
    for (int64_t i = tc.valid_length; i < 24; ++i) CHECK(tc.tokens[static_cast<size_t>(i)] == 0);
    CHECK_THROWS_AS(render_caption(spec, rng, 24, Vocabulary(std::vector<std::string>{"a", "with"})), VocabularyError);
    CHECK_THROWS(render_caption(spec, rng, 4, ds.vocab));
  }

  TEST_CASE("standard corpus vocabulary size equals palette plus template words plus padding") {
    const Dataset ds = generate_dataset(DatasetConfig{});
    // independent frequency table over the training captions' surface words
    std::map<std::string, int> freq;
    for (const Sample& s : ds.samples) {
      if (s.holdout) continue;
      for (int64_t i = 0; i < s.valid_length; ++i) ++freq[ds.vocab.word(s.tokens[static_cast<size_t>(i)])];
    }
    int qualifying = 0;
    for (const auto& [w, n] : freq) qualifying += n > 2;
    CHECK(ds.vocab.size() == qualifying + 1);
    CHECK(ds.vocab.size() == static_cast<int64_t>(palette().size() + template_words().size()) + 1);
  }

  TEST_CASE("captions ignore the nuisance and match on-mask colors") {
    const Dataset ds = generate_dataset(small_config());
    for (const Sample& s : ds.samples) {
      CHECK(s.valid_length <= 24);
      for (int64_t i = s.valid_length; i < 24; ++i) CHECK(s.tokens[static_cast<size_t>(i)] == 0);
      std::set<std::string> colors;
      for (int64_t i = 0; i < s.valid_length; ++i) {
        const std::string& w = ds.vocab.word(s.tokens[static_cast<size_t>(i)]);
        for (const Color& c : palette())
          if (c.name == w) colors.insert(w);
      }
      std::set<std::string> expected;
      for (int a : s.identity.attributes) expected.insert(palette()[static_cast<size_t>(a)].name);
      CHECK(colors == expected);
    }
    // same caption stream under a different nuisance configuration
    DatasetConfig other = small_config();
    other.tint_min = 0.6;
    other.num_backgrounds = 3;
    const Dataset ds2 = generate_dataset(other);
    for (size_t i = 0; i < ds.samples.size(); ++i) CHECK(ds.samples[i].tokens == ds2.samples[i].tokens);
  }

  TEST_CASE("held-out split is the last images of every identity") {
    const Dataset ds = generate_dataset(small_config());
    CHECK(ds.split(true).size() == 6);
    CHECK(ds.split(false).size() == 18);
    for (const Sample* s : ds.split(true)) CHECK(s->index % 4 == 3);
  }

  TEST_CASE("dataset directory round trip and byte-identical manifests") {
    const fs::path a = fs::temp_directory_path() / "manetlab_datagen_a";
    const fs::path b = fs::temp_directory_path() / "manetlab_datagen_b";
    fs::remove_all(a);
    fs::remove_all(b);
    write_dataset(generate_dataset(small_config()), a);
    write_dataset(generate_dataset(small_config()), b);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    CHECK(slurp(a / "images" / "000005.f32") == slurp(b / "images" / "000005.f32"));
    const Dataset back = load_dataset(a);
    const Dataset orig = generate_dataset(small_config());
    REQUIRE(back.samples.size() == orig.samples.size());
    CHECK(back.vocab.words() == orig.vocab.words());
    for (size_t i = 0; i < orig.samples.size(); ++i) {
      CHECK(back.samples[i].tokens == orig.samples[i].tokens);
      CHECK(back.samples[i].identity == orig.samples[i].identity);
      CHECK(back.samples[i].holdout == orig.samples[i].holdout);
      CHECK(max_abs_diff(back.samples[i].image, orig.samples[i].image) == 0.0);
    }
  }
}
