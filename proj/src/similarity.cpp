#include "dpk/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dpk/rng.hpp"

namespace dpk {

Matrix gram(const Matrix& x) {
  if (!x.allFinite()) {
    throw InvalidInputError("gram: non-finite activation entries");
  }
  return x * x.transpose();
}

double hsic1(const Matrix& k, const Matrix& l) {
  const Eigen::Index n = k.rows();
  if (k.cols() != n || l.rows() != l.cols()) {
    throw ShapeError("hsic1: inputs must be square");
  }
  if (l.rows() != n) {
    throw ShapeError("hsic1: Gram matrices differ in size");
  }
  if (n < 4) {
    throw SizeError("hsic1: requires n >= 4, got n=" + std::to_string(n));
  }
  Matrix kt = k;
  Matrix lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();

  const double nd = static_cast<double>(n);
  const double trace_kl = (kt.array() * lt.transpose().array()).sum();
  const double sum_k = kt.sum();
  const double sum_l = lt.sum();
  const Eigen::VectorXd k_rows = kt.rowwise().sum();
  const Eigen::VectorXd l_cols = lt.colwise().sum();
  const double one_kl_one = k_rows.dot(lt * Eigen::VectorXd::Ones(n));
  (void)l_cols;

  return (trace_kl + sum_k * sum_l / ((nd - 1.0) * (nd - 2.0)) -
          2.0 / (nd - 2.0) * one_kl_one) /
         (nd * (nd - 3.0));
}

double cka_minibatch(const std::vector<Matrix>& xs, const std::vector<Matrix>& ys) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw ShapeError("cka_minibatch: batch lists empty or of unequal length");
  }
  double cross = 0.0, self_x = 0.0, self_y = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].rows() != ys[i].rows()) {
      throw ShapeError("cka_minibatch: paired batches differ in example count");
    }
    const Matrix k = gram(xs[i]);
    const Matrix l = gram(ys[i]);
    cross += hsic1(k, l);
    self_x += hsic1(k, k);
    self_y += hsic1(l, l);
  }
  const double kf = static_cast<double>(xs.size());
  cross /= kf;
  self_x /= kf;
  self_y /= kf;
  if (self_x <= 0.0 || self_y <= 0.0) {
    throw DegenerateBatchError("cka_minibatch: non-positive self-HSIC mean");
  }
  return cross / (std::sqrt(self_x) * std::sqrt(self_y));
}

namespace {

// Random orthonormal projection (q columns of a QR-orthogonalized Gaussian
// matrix), fixed by the seed so every call within a run agrees.
Matrix orthonormal_projection(Eigen::Index p, Eigen::Index q, uint64_t seed) {
  Rng rng = make_rng(seed, "cosine-projection");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(p, q);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) {
      g(i, j) = gauss(rng);
    }
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix full_q = qr.householderQ() * Matrix::Identity(p, q);
  return full_q;
}

}  // namespace

double cosine_gap(const Matrix& x, const Matrix& y, uint64_t projection_seed) {
  if (x.rows() != y.rows()) {
    throw ShapeError("cosine_gap: example counts differ");
  }
  Matrix xa = x;
  Matrix ya = y;
  if (x.cols() != y.cols()) {
    const Eigen::Index q = std::min(x.cols(), y.cols());
    if (x.cols() > q) {
      xa = x * orthonormal_projection(x.cols(), q, projection_seed);
    } else {
      ya = y * orthonormal_projection(y.cols(), q, projection_seed);
    }
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < xa.rows(); ++i) {
    const double nx = xa.row(i).norm();
    const double ny = ya.row(i).norm();
    if (nx == 0.0 || ny == 0.0) {
      continue;  // counts as 0
    }
    acc += xa.row(i).dot(ya.row(i)) / (nx * ny);
  }
  return acc / static_cast<double>(xa.rows());
}

double dynamic_ratio(double similarity) {
  return std::clamp(1.0 - similarity, 0.0, 1.0);
}

void SimilarityTrace::append(const TraceEntry& e) {
  entries_.push_back(e);
}

double SimilarityTrace::epoch_mean_cka(int epoch, int steps_per_epoch) const {
  double acc = 0.0;
  int count = 0;
  for (const auto& e : entries_) {
    if (e.step / steps_per_epoch == epoch) {
      acc += e.cka;
      ++count;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

double SimilarityTrace::epoch_mean_ratio(int epoch, int steps_per_epoch) const {
  double acc = 0.0;
  int count = 0;
  for (const auto& e : entries_) {
    if (e.step / steps_per_epoch == epoch) {
      acc += e.ratio;
      ++count;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

std::string SimilarityTrace::to_csv() const {
  std::ostringstream out;
  out << "step,stage,cka,cosine,ratio,cls_loss,logits_loss,feat_loss\n";
  out.precision(17);
  for (const auto& e : entries_) {
    out << e.step << ',' << e.stage << ',' << e.cka << ',' << e.cosine << ','
        << e.ratio << ',' << e.cls_loss << ',' << e.logits_loss << ','
        << e.feat_loss << '\n';
  }
  return out.str();
}

void SimilarityTrace::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  out << to_csv();
}

}  // namespace dpk
