// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "manetlab/array_io.hpp"
#include "test_util.hpp"

using namespace manet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "manetlab_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("f32 array round trip keeps shape and float values") {
    std::mt19937_64 rng(1);
    const Tensor t = testutil::random_tensor({3, 4, 2}, rng);
    io::write_f32_array(scratch("a.f32"), t);
    const Tensor back = io::read_f32_array(scratch("a.f32"));
    CHECK(back.shape() == t.shape());
    for (int64_t i = 0; i < static_cast<int64_t>(t.size()); ++i)
      CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
  }

  TEST_CASE("f32 header layout: magic, rank, dims") {
    const Tensor t(Shape{2, 3}, 1.5);
    io::write_f32_array(scratch("h.f32"), t);
    std::ifstream in(scratch("h.f32"), std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "MANETF32");
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    CHECK(rank == 2);
    uint64_t d0 = 0, d1 = 0;
    in.read(reinterpret_cast<char*>(&d0), 8);
    in.read(reinterpret_cast<char*>(&d1), 8);
    CHECK(d0 == 2);
    CHECK(d1 == 3);
    CHECK(fs::file_size(scratch("h.f32")) == 8 + 4 + 16 + 6 * 4);
  }

  TEST_CASE("archive round trip is bit exact") {
    std::mt19937_64 rng(2);
    io::Archive a;
    a.attributes["epoch"] = "7";
    a.attributes["note"] = "x=y";
    a.put("w", testutil::random_tensor({5, 3}, rng));
    a.put("scalar", Tensor(Shape{1}, 0.1));
    io::write_archive(scratch("a.arc"), a);
    const io::Archive b = io::read_archive(scratch("a.arc"));
    CHECK(b.attributes == a.attributes);
    REQUIRE(b.arrays.size() == 2);
    CHECK(max_abs_diff(b.get("w"), a.get("w")) == 0.0);
    CHECK(b.get("w").shape() == a.get("w").shape());
    CHECK(b.get("scalar")[0] == 0.1);
    CHECK(b.find("missing") == nullptr);
    CHECK_THROWS(b.get("missing"));
  }

  TEST_CASE("corrupt files are rejected") {
    {
      std::ofstream out(scratch("bad.f32"), std::ios::binary);
      out << "NOTMAGIC";
    }
    CHECK_THROWS_AS(io::read_f32_array(scratch("bad.f32")), io::FormatError);
    CHECK_THROWS_AS(io::read_archive(scratch("bad.f32")), io::FormatError);
    io::write_f32_array(scratch("trunc.f32"), Tensor(Shape{10}, 1.0));
    fs::resize_file(scratch("trunc.f32"), 30);
    CHECK_THROWS_AS(io::read_f32_array(scratch("trunc.f32")), io::FormatError);
  }
}
