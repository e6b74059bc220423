#pragma once

#include <cstdint>
#include <vector>

#include "dpk/nn.hpp"

namespace dpk::data {

using nn::Tensor4;

struct DatasetSplit {
  Tensor4 images;  // N x C x H x W
  std::vector<int> labels;
  int size() const { return images.b; }
};

struct DatasetConfig {
  int train_size = 5000;
  int test_size = 1000;
  int image_size = 32;
  int classes = 10;
  double noise = 0.5;
};

// Procedurally generated 10-class image set: class-specific oriented
// gratings mixed with a class-colored blob, randomized per sample
// (phase, offsets, amplitude) and corrupted with Gaussian noise.
// Deterministic given the seed.
struct Dataset {
  DatasetSplit train;
  DatasetSplit test;
};

Dataset make_synthetic_dataset(const DatasetConfig& cfg, uint64_t seed);

// Copy a contiguous index range into a batch tensor.
DatasetSplit take_batch(const DatasetSplit& d, const std::vector<int>& indices);

}  // namespace dpk::data
