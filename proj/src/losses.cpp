#include "dpk/losses.hpp"

#include <cmath>
#include <iostream>

namespace dpk::losses {

Region parse_region(const std::string& name) {
  if (name == "full") return Region::kFull;
  if (name == "non_masked") return Region::kNonMasked;
  throw ConfigError("unknown loss region: " + name);
}

namespace {

Eigen::ArrayXXd softened(const Matrix& logits, double tau) {
  Eigen::ArrayXXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::ArrayXd z = logits.row(i).array() / tau;
    z -= z.maxCoeff();
    Eigen::ArrayXd e = z.exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

double logits_kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                      bool tau_squared, Matrix* dstudent) {
  if (student_logits.rows() != teacher_logits.rows() ||
      student_logits.cols() != teacher_logits.cols()) {
    throw ShapeError("logits_kd_loss: logits shapes differ");
  }
  if (tau <= 0.0) {
    throw ConfigError("logits_kd_loss: temperature must be positive");
  }
  const double n = static_cast<double>(student_logits.rows());
  const Eigen::ArrayXXd pt = softened(teacher_logits, tau);
  const Eigen::ArrayXXd ps = softened(student_logits, tau);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < pt.rows(); ++i) {
    for (Eigen::Index j = 0; j < pt.cols(); ++j) {
      if (pt(i, j) > 0.0) {
        loss += pt(i, j) * (std::log(pt(i, j)) - std::log(ps(i, j)));
      }
    }
  }
  loss /= n;
  const double scale = tau_squared ? tau * tau : 1.0;
  if (dstudent) {
    *dstudent = ((ps - pt) * (scale / (tau * n))).matrix();
  }
  return loss * scale;
}

double feature_loss(const Tensor4& prediction, const Tensor4& target,
                    const std::vector<MaskPattern>* masks, Region region, Tensor4* dprediction) {
  if (prediction.b != target.b || prediction.c != target.c || prediction.h != target.h ||
      prediction.w != target.w) {
    throw ShapeError("feature_loss: shapes differ");
  }
  if (region == Region::kNonMasked && (!masks || masks->empty())) {
    throw ConfigError("feature_loss: non_masked region requires a mask");
  }
  if (dprediction) *dprediction = prediction.zeros_like();

  auto selected = [&](int bi, int i, int j) -> bool {
    if (region == Region::kFull) return true;
    const MaskPattern& m = masks->size() == 1 ? (*masks)[0] : (*masks)[bi];
    const int kh = prediction.h / m.rows;
    const int kw = prediction.w / m.cols;
    return !m.at(i / kh, j / kw);
  };

  double acc = 0.0;
  size_t count = 0;
  for (int bi = 0; bi < prediction.b; ++bi)
    for (int i = 0; i < prediction.h; ++i)
      for (int j = 0; j < prediction.w; ++j) {
        if (!selected(bi, i, j)) continue;
        for (int ci = 0; ci < prediction.c; ++ci) {
          const double d = prediction.at(bi, ci, i, j) - target.at(bi, ci, i, j);
          acc += d * d;
          ++count;
        }
      }
  if (count == 0) {
    std::cerr << "[dpk] feature_loss: empty unmasked region, returning 0\n";
    return 0.0;
  }
  if (dprediction) {
    const double scale = 2.0 / static_cast<double>(count);
    for (int bi = 0; bi < prediction.b; ++bi)
      for (int i = 0; i < prediction.h; ++i)
        for (int j = 0; j < prediction.w; ++j) {
          if (!selected(bi, i, j)) continue;
          for (int ci = 0; ci < prediction.c; ++ci) {
            dprediction->at(bi, ci, i, j) =
                scale * (prediction.at(bi, ci, i, j) - target.at(bi, ci, i, j));
          }
        }
  }
  return acc / static_cast<double>(count);
}

double total_loss(double cls, double logits, double feat, const LossWeights& w) {
  return cls + w.alpha * logits + w.beta * feat;
}

double fgd_masked_loss(const FgdInputs& in, Tensor4* dhybrid) {
  const Tensor4& t = in.teacher_feat;
  const Tensor4& h = in.hybrid_feat;
  if (t.b != h.b || t.c != h.c || t.h != h.h || t.w != h.w) {
    throw ShapeError("fgd_masked_loss: teacher/hybrid shapes differ");
  }
  if (in.fg_mask.h != t.h || in.fg_mask.w != t.w || in.fg_mask.c != 1 ||
      in.spatial_attn.h != t.h || in.spatial_attn.w != t.w || in.spatial_attn.c != 1 ||
      in.channel_attn.c != t.c) {
    throw ShapeError("fgd_masked_loss: mask/attention shapes do not broadcast");
  }
  if (dhybrid) *dhybrid = h.zeros_like();
  double loss = 0.0;
  for (int bi = 0; bi < t.b; ++bi)
    for (int ci = 0; ci < t.c; ++ci)
      for (int i = 0; i < t.h; ++i)
        for (int j = 0; j < t.w; ++j) {
          const double m = in.fg_mask.at(bi, 0, i, j);
          const double a = in.spatial_attn.at(bi, 0, i, j) * in.channel_attn.at(bi, ci, 0, 0);
          const double wgt = (in.w_fg * m + in.w_bg * (1.0 - m)) * a;
          const double d = t.at(bi, ci, i, j) - h.at(bi, ci, i, j);
          loss += wgt * d * d;
          if (dhybrid) dhybrid->at(bi, ci, i, j) = -2.0 * wgt * d;
        }
  return loss;
}

}  // namespace dpk::losses
