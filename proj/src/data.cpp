#include "dpk/data.hpp"

#include <cmath>

#include "dpk/rng.hpp"

namespace dpk::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

// One sample of class `cls`; parameters vary smoothly with the class index
// so adjacent classes stay hard to separate under noise.
void render_sample(Tensor4& images, int index, int cls, int n, int classes, double noise, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double angle = kPi * cls / classes;
  const double freq = 2.0 + 1.5 * (cls % 5);
  const double phase = unit(rng) * 2.0 * kPi;
  const double amp = 0.7 + 0.6 * unit(rng);
  const double cx = n * (0.25 + 0.5 * unit(rng));
  const double cy = n * (0.25 + 0.5 * unit(rng));
  const double blob_r = n * 0.18;
  // class-specific channel mixture for the grating and the blob
  const double mix[3] = {0.5 + 0.5 * std::cos(2.0 * kPi * cls / classes),
                         0.5 + 0.5 * std::cos(2.0 * kPi * cls / classes + 2.0),
                         0.5 + 0.5 * std::cos(2.0 * kPi * cls / classes + 4.0)};
  const double blob_mix[3] = {mix[1], mix[2], mix[0]};
  const double ca = std::cos(angle), sa = std::sin(angle);

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double u = (i * ca + j * sa) / n;
      const double grating = amp * std::sin(2.0 * kPi * freq * u + phase);
      const double d2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (blob_r * blob_r);
      const double blob = amp * std::exp(-0.5 * d2);
      for (int c = 0; c < 3; ++c) {
        images.at(index, c, i, j) =
            mix[c] * grating + blob_mix[c] * blob + noise * gauss(rng);
      }
    }
  }
}

DatasetSplit make_split(const DatasetConfig& cfg, int count, uint64_t seed, const char* purpose) {
  DatasetSplit split;
  split.images = Tensor4(count, 3, cfg.image_size, cfg.image_size);
  split.labels.resize(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, purpose, static_cast<uint64_t>(i));
    const int cls = i % cfg.classes;  // balanced classes
    split.labels[i] = cls;
    render_sample(split.images, i, cls, cfg.image_size, cfg.classes, cfg.noise, rng);
  }
  return split;
}

}  // namespace

Dataset make_synthetic_dataset(const DatasetConfig& cfg, uint64_t seed) {
  Dataset d;
  d.train = make_split(cfg, cfg.train_size, seed, "dataset-train");
  d.test = make_split(cfg, cfg.test_size, seed, "dataset-test");
  return d;
}

DatasetSplit take_batch(const DatasetSplit& d, const std::vector<int>& indices) {
  DatasetSplit out;
  out.images = Tensor4(static_cast<int>(indices.size()), d.images.c, d.images.h, d.images.w);
  out.labels.resize(indices.size());
  const size_t per = static_cast<size_t>(d.images.c) * d.images.h * d.images.w;
  for (size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    out.labels[i] = d.labels[src];
    std::copy(d.images.data.begin() + src * per, d.images.data.begin() + (src + 1) * per,
              out.images.data.begin() + i * per);
  }
  return out;
}

}  // namespace dpk::data
