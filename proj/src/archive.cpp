#include "dpk/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dpk::archive {

static_assert(std::endian::native == std::endian::little,
              "DPKF payloads are little-endian; big-endian hosts need byte swaps");

namespace {

constexpr char kMagic[4] = {'D', 'P', 'K', 'F'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_scalar(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_scalar(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidInputError("DPKF archive truncated");
  return v;
}

}  // namespace

size_t TensorRecord::count() const {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

void write_archive(const std::string& path, const std::vector<TensorRecord>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot open archive for writing: " + path);
  out.write(kMagic, 4);
  write_scalar<uint32_t>(out, kVersion);
  write_scalar<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.values.size() != t.count()) {
      throw ShapeError("archive tensor payload does not match dims: " + t.name);
    }
    write_scalar<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_scalar<uint8_t>(out, t.is_f64 ? 1 : 0);
    write_scalar<uint32_t>(out, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) write_scalar<uint32_t>(out, d);
    if (t.is_f64) {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    } else {
      for (double v : t.values) write_scalar<float>(out, static_cast<float>(v));
    }
  }
}

std::vector<TensorRecord> read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open archive: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw InvalidInputError("not a DPKF archive: " + path);
  }
  const uint32_t version = read_scalar<uint32_t>(in);
  if (version != kVersion) {
    throw InvalidInputError("unsupported DPKF version " + std::to_string(version));
  }
  const uint32_t count = read_scalar<uint32_t>(in);
  std::vector<TensorRecord> tensors(count);
  for (auto& t : tensors) {
    const uint32_t name_len = read_scalar<uint32_t>(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const uint8_t dtype = read_scalar<uint8_t>(in);
    if (dtype > 1) throw InvalidInputError("bad dtype tag in archive");
    t.is_f64 = dtype == 1;
    const uint32_t rank = read_scalar<uint32_t>(in);
    t.dims.resize(rank);
    for (auto& d : t.dims) d = read_scalar<uint32_t>(in);
    t.values.resize(t.count());
    if (t.is_f64) {
      in.read(reinterpret_cast<char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
      if (!in) throw InvalidInputError("DPKF archive truncated");
    } else {
      for (auto& v : t.values) v = read_scalar<float>(in);
    }
  }
  return tensors;
}

std::vector<std::vector<double>> flatten_examples(const std::vector<TensorRecord>& tensors) {
  if (tensors.empty()) return {};
  size_t n = 0;
  for (const auto& t : tensors) {
    if (t.dims.empty()) throw ShapeError("archive tensor has no dims: " + t.name);
    if (&t == &tensors.front()) {
      n = t.dims[0];
    } else if (t.dims[0] != n) {
      throw ShapeError("archive tensors disagree on the example count: " + t.name);
    }
  }
  std::vector<std::vector<double>> rows(n);
  for (const auto& t : tensors) {
    const size_t per = t.count() / (n == 0 ? 1 : n);
    for (size_t i = 0; i < n; ++i) {
      rows[i].insert(rows[i].end(), t.values.begin() + i * per,
                     t.values.begin() + (i + 1) * per);
    }
  }
  return rows;
}

}  // namespace dpk::archive
