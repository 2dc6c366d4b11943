// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "manetlab/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace manet::io {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kF32Magic[8] = {'M', 'A', 'N', 'E', 'T', 'F', '3', '2'};
constexpr char kArcMagic[8] = {'M', 'A', 'N', 'E', 'T', 'A', 'R', 'C'};
constexpr uint32_t kArcVersion = 1;

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated file: " + path.string());
  return v;
}

void put_string(std::ofstream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& is, const std::filesystem::path& path) {
  const auto len = get<uint32_t>(is, path);
  if (len > (1u << 20)) throw FormatError("implausible string length in " + path.string());
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw FormatError("truncated file: " + path.string());
  return s;
}

Shape get_dims(std::ifstream& is, const std::filesystem::path& path) {
  const auto rank = get<uint32_t>(is, path);
  if (rank > 8) throw FormatError("implausible rank in " + path.string());
  Shape dims(rank);
  for (auto& d : dims) d = static_cast<int64_t>(get<uint64_t>(is, path));
  return dims;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  return is;
}

}  // namespace

void write_f32_array(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os = open_out(path);
  os.write(kF32Magic, sizeof(kF32Magic));
  put<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(d));
  std::vector<float> buf(t.size());
  for (size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_f32_array(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kF32Magic, 8) != 0) throw FormatError("bad magic in " + path.string());
  Shape dims = get_dims(is, path);
  std::vector<float> buf(static_cast<size_t>(shape_numel(dims)));
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw FormatError("truncated array data in " + path.string());
  return Tensor(std::move(dims), std::vector<double>(buf.begin(), buf.end()));
}

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Archive::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError("archive has no array named '" + name + "'");
  return *t;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  std::ofstream os = open_out(path);
  os.write(kArcMagic, sizeof(kArcMagic));
  put<uint32_t>(os, kArcVersion);
  put<uint64_t>(os, archive.attributes.size());
  for (const auto& [k, v] : archive.attributes) {
    put_string(os, k);
    put_string(os, v);
  }
  put<uint64_t>(os, archive.arrays.size());
  for (const auto& [name, t] : archive.arrays) {
    put_string(os, name);
    put<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kArcMagic, 8) != 0) throw FormatError("bad magic in " + path.string());
  if (get<uint32_t>(is, path) != kArcVersion) throw FormatError("unsupported archive version in " + path.string());
  Archive a;
  const auto nattr = get<uint64_t>(is, path);
  for (uint64_t i = 0; i < nattr; ++i) {
    std::string k = get_string(is, path);
    a.attributes[k] = get_string(is, path);
  }
  const auto narr = get<uint64_t>(is, path);
  for (uint64_t i = 0; i < narr; ++i) {
    std::string name = get_string(is, path);
    Shape dims = get_dims(is, path);
    Tensor t(dims);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw FormatError("truncated array '" + name + "' in " + path.string());
    a.put(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace manet::io
