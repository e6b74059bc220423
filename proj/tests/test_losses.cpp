#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "dpk/losses.hpp"
#include "dpk/masking.hpp"
#include "test_grad_utils.hpp"

using dpk::MaskPattern;
using dpk::Rng;
using dpk::nn::Matrix;
using dpk::nn::Tensor4;
namespace ls = dpk::losses;

namespace {

Matrix random_logits(int n, int c, uint64_t seed) {
  Matrix m(n, c);
  Rng rng = dpk::make_rng(seed, "test-logits");
  std::normal_distribution<double> dist(0.0, 2.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor4 random_tensor(int b, int c, int h, int w, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(b, c, h, w);
  Rng rng = dpk::make_rng(seed, "test-feat");
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

// Independent scalar reference: per-row softened softmax and KL divergence,
// computed with plain std::exp and running sums.
double kd_reference(const Matrix& s, const Matrix& t, double tau, bool tau_squared) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double zs = 0.0, zt = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      zs += std::exp(s(i, j) / tau);
      zt += std::exp(t(i, j) / tau);
    }
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double pt = std::exp(t(i, j) / tau) / zt;
      const double ps = std::exp(s(i, j) / tau) / zs;
      total += pt * std::log(pt / ps);
    }
  }
  total /= static_cast<double>(s.rows());
  return tau_squared ? total * tau * tau : total;
}

}  // namespace

TEST_CASE("logits distillation loss matches the scalar reference") {
  const Matrix s = random_logits(8, 10, 201);
  const Matrix t = random_logits(8, 10, 203);
  for (double tau : {1.0, 2.0, 4.0}) {
    CHECK(ls::logits_kd_loss(s, t, tau, true) ==
          doctest::Approx(kd_reference(s, t, tau, true)).epsilon(1e-12));
    CHECK(ls::logits_kd_loss(s, t, tau, false) ==
          doctest::Approx(kd_reference(s, t, tau, false)).epsilon(1e-12));
  }
}

TEST_CASE("logits distillation loss is zero for identical logits and non-negative otherwise") {
  const Matrix s = random_logits(6, 5, 207);
  CHECK(ls::logits_kd_loss(s, s, 4.0) == doctest::Approx(0.0).epsilon(1e-12));
  const Matrix t = random_logits(6, 5, 209);
  CHECK(ls::logits_kd_loss(s, t, 4.0) > 0.0);
}

TEST_CASE("the tau^2 toggle rescales the loss exactly") {
  const Matrix s = random_logits(5, 7, 211);
  const Matrix t = random_logits(5, 7, 213);
  const double tau = 3.0;
  const double with = ls::logits_kd_loss(s, t, tau, true);
  const double without = ls::logits_kd_loss(s, t, tau, false);
  CHECK(with == doctest::Approx(without * tau * tau).epsilon(1e-12));
}

TEST_CASE("logits distillation rejects bad shapes and temperatures") {
  const Matrix s = random_logits(4, 6, 215);
  const Matrix t = random_logits(4, 5, 217);
  CHECK_THROWS_AS(ls::logits_kd_loss(s, t, 4.0), dpk::ShapeError);
  const Matrix t2 = random_logits(4, 6, 217);
  CHECK_THROWS_AS(ls::logits_kd_loss(s, t2, 0.0), dpk::ConfigError);
  CHECK_THROWS_AS(ls::logits_kd_loss(s, t2, -1.0), dpk::ConfigError);
}

TEST_CASE("logits distillation gradient matches central finite differences") {
  Matrix s = random_logits(6, 8, 221);
  const Matrix t = random_logits(6, 8, 223);
  for (bool sq : {true, false}) {
    Matrix ds;
    ls::logits_kd_loss(s, t, 4.0, sq, &ds);
    auto loss = [&]() { return ls::logits_kd_loss(s, t, 4.0, sq); };
    CHECK(gradcheck::value_max_rel_err(s.data(), s.size(), ds.data(), loss) < gradcheck::kTol);
  }
}

TEST_CASE("full-region feature loss is the plain mean squared error") {
  Tensor4 p = random_tensor(3, 4, 4, 4, 231);
  Tensor4 t = random_tensor(3, 4, 4, 4, 233);
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p.data[i] - t.data[i];
    acc += d * d;
  }
  const double expected = acc / static_cast<double>(p.size());
  CHECK(ls::feature_loss(p, t, nullptr, ls::Region::kFull) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(ls::feature_loss(p, p, nullptr, ls::Region::kFull) == 0.0);
}

TEST_CASE("non-masked feature loss matches an explicit element-selection loop") {
  const int b = 2, c = 3, h = 4, w = 4;
  Tensor4 p = random_tensor(b, c, h, w, 241);
  Tensor4 t = random_tensor(b, c, h, w, 243);
  std::vector<MaskPattern> masks;
  for (int i = 0; i < b; ++i) {
    Rng rng = dpk::make_rng(245, "test-mask", static_cast<uint64_t>(i));
    masks.push_back(dpk::random_mask(2, 2, 0.5, rng));
  }
  // Each 2x2 mask cell covers a 2x2 spatial tile of the 4x4 map.
  double acc = 0.0;
  size_t count = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          if (masks[bi].at(i / 2, j / 2)) continue;
          const double d = p.at(bi, ci, i, j) - t.at(bi, ci, i, j);
          acc += d * d;
          ++count;
        }
  REQUIRE(count > 0);
  CHECK(ls::feature_loss(p, t, &masks, ls::Region::kNonMasked) ==
        doctest::Approx(acc / static_cast<double>(count)).epsilon(1e-12));
}

TEST_CASE("a fully masked feature map yields zero non-masked loss") {
  Tensor4 p = random_tensor(1, 2, 4, 4, 251);
  Tensor4 t = random_tensor(1, 2, 4, 4, 253);
  MaskPattern all;
  all.rows = 2;
  all.cols = 2;
  all.flags.assign(4, true);
  std::vector<MaskPattern> masks{all};
  CHECK(ls::feature_loss(p, t, &masks, ls::Region::kNonMasked) == 0.0);
}

TEST_CASE("feature loss validates shapes and mask presence") {
  Tensor4 p = random_tensor(1, 2, 4, 4, 255);
  Tensor4 t = random_tensor(1, 2, 4, 2, 257);
  CHECK_THROWS_AS(ls::feature_loss(p, t, nullptr, ls::Region::kFull), dpk::ShapeError);
  Tensor4 t2 = random_tensor(1, 2, 4, 4, 257);
  CHECK_THROWS_AS(ls::feature_loss(p, t2, nullptr, ls::Region::kNonMasked), dpk::ConfigError);
}

TEST_CASE("feature loss gradients match central finite differences") {
  const int b = 2, c = 2, h = 4, w = 4;
  Tensor4 p = random_tensor(b, c, h, w, 261);
  Tensor4 t = random_tensor(b, c, h, w, 263);
  std::vector<MaskPattern> masks;
  for (int i = 0; i < b; ++i) {
    Rng rng = dpk::make_rng(265, "test-mask", static_cast<uint64_t>(i));
    masks.push_back(dpk::random_mask(2, 2, 0.5, rng));
  }
  {
    Tensor4 dp;
    ls::feature_loss(p, t, nullptr, ls::Region::kFull, &dp);
    auto loss = [&]() { return ls::feature_loss(p, t, nullptr, ls::Region::kFull); };
    CHECK(gradcheck::value_max_rel_err(p.data.data(), p.data.size(), dp.data.data(), loss) <
          gradcheck::kTol);
  }
  {
    Tensor4 dp;
    ls::feature_loss(p, t, &masks, ls::Region::kNonMasked, &dp);
    auto loss = [&]() { return ls::feature_loss(p, t, &masks, ls::Region::kNonMasked); };
    CHECK(gradcheck::value_max_rel_err(p.data.data(), p.data.size(), dp.data.data(), loss) <
          gradcheck::kTol);
  }
}

TEST_CASE("total loss combines the three terms linearly") {
  ls::LossWeights w;
  w.alpha = 0.8;
  w.beta = 0.2;
  CHECK(ls::total_loss(1.5, 2.0, 3.0, w) == doctest::Approx(1.5 + 0.8 * 2.0 + 0.2 * 3.0));
  w.alpha = 0.0;
  CHECK(ls::total_loss(1.5, 99.0, 3.0, w) == doctest::Approx(1.5 + 0.2 * 3.0));
  w.beta = 0.0;
  CHECK(ls::total_loss(1.5, 99.0, 99.0, w) == doctest::Approx(1.5));
}

namespace {

ls::FgdInputs make_fgd(int b, int c, int h, int w, uint64_t seed) {
  ls::FgdInputs in;
  in.teacher_feat = random_tensor(b, c, h, w, seed);
  in.hybrid_feat = random_tensor(b, c, h, w, seed + 1);
  in.fg_mask = Tensor4(b, 1, h, w);
  Rng rng = dpk::make_rng(seed + 2, "fgd-mask");
  std::bernoulli_distribution coin(0.4);
  for (auto& v : in.fg_mask.data) v = coin(rng) ? 1.0 : 0.0;
  in.spatial_attn = random_tensor(b, 1, h, w, seed + 3, 0.1, 2.0);
  in.channel_attn = random_tensor(b, c, 1, 1, seed + 4, 0.1, 2.0);
  return in;
}

// Independent reference: foreground and background contributions summed in
// two separate passes.
double fgd_reference(const ls::FgdInputs& in) {
  double fg = 0.0, bg = 0.0;
  for (int bi = 0; bi < in.teacher_feat.b; ++bi)
    for (int ci = 0; ci < in.teacher_feat.c; ++ci)
      for (int i = 0; i < in.teacher_feat.h; ++i)
        for (int j = 0; j < in.teacher_feat.w; ++j) {
          const double a =
              in.spatial_attn.at(bi, 0, i, j) * in.channel_attn.at(bi, ci, 0, 0);
          const double d = in.teacher_feat.at(bi, ci, i, j) - in.hybrid_feat.at(bi, ci, i, j);
          if (in.fg_mask.at(bi, 0, i, j) > 0.5) {
            fg += a * d * d;
          } else {
            bg += a * d * d;
          }
        }
  return in.w_fg * fg + in.w_bg * bg;
}

}  // namespace

TEST_CASE("detector distillation loss matches the two-pass reference") {
  ls::FgdInputs in = make_fgd(2, 3, 4, 4, 271);
  CHECK(ls::fgd_masked_loss(in) == doctest::Approx(fgd_reference(in)).epsilon(1e-12));
}

TEST_CASE("detector distillation loss is zero when hybrid equals teacher") {
  ls::FgdInputs in = make_fgd(2, 3, 4, 4, 281);
  in.hybrid_feat = in.teacher_feat;
  CHECK(ls::fgd_masked_loss(in) == 0.0);
}

TEST_CASE("an all-foreground mask reduces to the single weighted term") {
  ls::FgdInputs in = make_fgd(1, 2, 4, 4, 291);
  for (auto& v : in.fg_mask.data) v = 1.0;
  double expected = 0.0;
  for (int ci = 0; ci < 2; ++ci)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double a = in.spatial_attn.at(0, 0, i, j) * in.channel_attn.at(0, ci, 0, 0);
        const double d = in.teacher_feat.at(0, ci, i, j) - in.hybrid_feat.at(0, ci, i, j);
        expected += in.w_fg * a * d * d;
      }
  CHECK(ls::fgd_masked_loss(in) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("detector distillation gradient matches central finite differences") {
  ls::FgdInputs in = make_fgd(2, 3, 4, 4, 301);
  // The default weights (5e-5 / 2.5e-5) make the loss tiny; bump them so the
  // finite-difference signal dominates rounding.
  in.w_fg = 0.5;
  in.w_bg = 0.25;
  Tensor4 dh;
  ls::fgd_masked_loss(in, &dh);
  auto loss = [&]() { return ls::fgd_masked_loss(in); };
  CHECK(gradcheck::value_max_rel_err(in.hybrid_feat.data.data(), in.hybrid_feat.data.size(),
                                     dh.data.data(), loss) < gradcheck::kTol);
}

TEST_CASE("detector distillation default weights follow the detection recipe") {
  ls::FgdInputs in;
  CHECK(in.w_fg == doctest::Approx(5e-5));
  CHECK(in.w_bg == doctest::Approx(2.5e-5));
}

TEST_CASE("detector distillation validates its shapes") {
  ls::FgdInputs in = make_fgd(1, 2, 4, 4, 311);
  in.hybrid_feat = random_tensor(1, 2, 4, 2, 313);
  CHECK_THROWS_AS(ls::fgd_masked_loss(in), dpk::ShapeError);
  ls::FgdInputs in2 = make_fgd(1, 2, 4, 4, 315);
  in2.channel_attn = Tensor4(1, 3, 1, 1);
  CHECK_THROWS_AS(ls::fgd_masked_loss(in2), dpk::ShapeError);
}

TEST_CASE("region parser accepts the documented names only") {
  CHECK(ls::parse_region("full") == ls::Region::kFull);
  CHECK(ls::parse_region("non_masked") == ls::Region::kNonMasked);
  CHECK_THROWS_AS(ls::parse_region("masked"), dpk::ConfigError);
}
