#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpk/errors.hpp"

namespace dpk::archive {

// One tensor inside a DPKF feature archive.
struct TensorRecord {
  std::string name;
  bool is_f64 = false;  // dtype tag: f32 or f64
  std::vector<uint32_t> dims;
  std::vector<double> values;  // stored at payload precision

  size_t count() const;
};

// DPKF binary archive: magic "DPKF", version, tensor count, then per
// tensor: name, dtype tag, rank, dims, little-endian payload.
void write_archive(const std::string& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> read_archive(const std::string& path);

// Concatenates every tensor row-wise (first dim = examples, rest
// flattened) into an examples x features matrix.
std::vector<std::vector<double>> flatten_examples(const std::vector<TensorRecord>& tensors);

}  // namespace dpk::archive
