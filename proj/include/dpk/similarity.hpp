#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpk/errors.hpp"

namespace dpk {

using Matrix = Eigen::MatrixXd;

// Linear-kernel Gram matrix K = X X^T. Throws InvalidInputError on
// non-finite entries.
Matrix gram(const Matrix& x);

// Unbiased HSIC estimator over two n x n Gram matrices with zeroed
// diagonals. Requires n >= 4; may return negative values.
double hsic1(const Matrix& k, const Matrix& l);

// Minibatch CKA: mean HSIC1 cross terms over the batches, normalized by
// the root of the mean self terms. Throws DegenerateBatchError when a
// denominator mean is <= 0.
double cka_minibatch(const std::vector<Matrix>& xs, const std::vector<Matrix>& ys);

// Mean per-example cosine similarity between row-flattened features.
// Feature dimensions may differ; the wider side is reduced with a seeded
// random orthonormal projection onto the first min(p1, p2) coordinates.
// Zero-norm rows contribute 0.
double cosine_gap(const Matrix& x, const Matrix& y, uint64_t projection_seed = 0);

// pi = clamp(1 - similarity, 0, 1).
double dynamic_ratio(double similarity);

struct TraceEntry {
  int64_t step = 0;
  int stage = 0;
  double cka = 0.0;
  double cosine = 0.0;
  double ratio = 0.0;
  double cls_loss = 0.0;
  double logits_loss = 0.0;
  double feat_loss = 0.0;
};

// Per-step similarity and loss record, appended by the training loop.
class SimilarityTrace {
 public:
  void append(const TraceEntry& e);
  const std::vector<TraceEntry>& entries() const { return entries_; }

  // Mean cka / ratio over the entries of one epoch (given steps per epoch).
  double epoch_mean_cka(int epoch, int steps_per_epoch) const;
  double epoch_mean_ratio(int epoch, int steps_per_epoch) const;

  std::string to_csv() const;
  void write_csv(const std::string& path) const;

 private:
  std::vector<TraceEntry> entries_;
};

}  // namespace dpk
