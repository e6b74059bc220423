#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "dpk/masking.hpp"
#include "dpk/nn.hpp"
#include "dpk/transform.hpp"
#include "test_grad_utils.hpp"

using dpk::MaskPattern;
using dpk::Rng;
using dpk::nn::Matrix;
using dpk::nn::Param;
using dpk::nn::Tensor4;
using dpk::nn::Tokens;
namespace tf = dpk::transform;

namespace {

Tensor4 random_tensor(int b, int c, int h, int w, uint64_t seed) {
  Tensor4 t(b, c, h, w);
  Rng rng = dpk::make_rng(seed, "test-tensor");
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Tokens random_tokens(int b, int rows, int cols, int dim, uint64_t seed) {
  Tokens t = Tokens::zeros(b, rows, cols, dim);
  Rng rng = dpk::make_rng(seed, "test-tokens");
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& m : t.seq)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return t;
}

double sumsq_tokens(const Tokens& t) {
  double s = 0.0;
  for (const auto& m : t.seq) s += m.squaredNorm();
  return 0.5 * s;
}

double sumsq_tensor(const Tensor4& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return 0.5 * s;
}

std::vector<MaskPattern> draw_masks(int b, int rows, int cols, double ratio, uint64_t seed) {
  std::vector<MaskPattern> masks;
  for (int i = 0; i < b; ++i) {
    Rng rng = dpk::make_rng(seed, "test-masks", static_cast<uint64_t>(i));
    masks.push_back(dpk::random_mask(rows, cols, ratio, rng));
  }
  return masks;
}

}  // namespace

TEST_CASE("default patch size keeps the token count within the cap") {
  CHECK(tf::default_patch_size(32, 32) == 4);   // 8x8 = 64 tokens
  CHECK(tf::default_patch_size(16, 16) == 2);   // 8x8
  CHECK(tf::default_patch_size(8, 8) == 1);     // 64 tokens already fit
  CHECK(tf::default_patch_size(4, 4) == 1);     // 16 tokens
  CHECK(tf::default_patch_size(14, 14) == 2);   // 7x7 = 49
  CHECK(tf::default_patch_size(56, 56) == 7);   // 8x8
  // The chosen size always divides both extents.
  for (int h : {4, 8, 12, 14, 16, 28, 32, 56}) {
    int k = tf::default_patch_size(h, h);
    CHECK(h % k == 0);
    CHECK((h / k) * (h / k) <= 64);
  }
}

TEST_CASE("patchify with a 1x1 identity projection reproduces the channel vectors") {
  const int b = 2, c = 5, h = 3, w = 4;
  Rng rng = dpk::make_rng(7, "patch-test");
  tf::PatchEmbed pe("pe", c, 1, c, rng);
  pe.weight().value = Matrix::Identity(c, c);
  pe.bias().value.setZero();
  Tensor4 f = random_tensor(b, c, h, w, 11);
  Tokens t = pe.forward(f);
  CHECK(t.rows == h);
  CHECK(t.cols == w);
  CHECK(t.dim == c);
  for (int bi = 0; bi < b; ++bi)
    for (int r = 0; r < h; ++r)
      for (int cc = 0; cc < w; ++cc)
        for (int ci = 0; ci < c; ++ci)
          CHECK(t.seq[bi](r * w + cc, ci) == f.at(bi, ci, r, cc));
}

TEST_CASE("patchify gathers each patch channel-major before the projection") {
  // c=1, k=2, identity projection onto dim 4: the token coordinates must be
  // the patch values in (ki, kj) order.
  const int h = 4, w = 4;
  Rng rng = dpk::make_rng(7, "patch-test");
  tf::PatchEmbed pe("pe", 1, 2, 4, rng);
  pe.weight().value = Matrix::Identity(4, 4);
  pe.bias().value.setZero();
  Tensor4 f = random_tensor(1, 1, h, w, 13);
  Tokens t = pe.forward(f);
  CHECK(t.rows == 2);
  CHECK(t.cols == 2);
  for (int pi = 0; pi < 2; ++pi) {
    for (int pj = 0; pj < 2; ++pj) {
      const int n = pi * 2 + pj;
      CHECK(t.seq[0](n, 0) == f.at(0, 0, 2 * pi, 2 * pj));
      CHECK(t.seq[0](n, 1) == f.at(0, 0, 2 * pi, 2 * pj + 1));
      CHECK(t.seq[0](n, 2) == f.at(0, 0, 2 * pi + 1, 2 * pj));
      CHECK(t.seq[0](n, 3) == f.at(0, 0, 2 * pi + 1, 2 * pj + 1));
    }
  }
}

TEST_CASE("patchify rejects indivisible patch sizes and channel mismatches") {
  Rng rng = dpk::make_rng(7, "patch-test");
  tf::PatchEmbed pe("pe", 3, 2, 4, rng);
  Tensor4 odd = random_tensor(1, 3, 5, 4, 17);
  CHECK_THROWS_AS(pe.forward(odd), dpk::ConfigError);
  Tensor4 wrong_c = random_tensor(1, 2, 4, 4, 17);
  CHECK_THROWS_AS(pe.forward(wrong_c), dpk::ShapeError);
}

TEST_CASE("patch embedding gradients match central finite differences") {
  const int b = 2, c = 3, h = 4, w = 4, k = 2, dim = 5;
  Rng rng = dpk::make_rng(21, "patch-fd");
  tf::PatchEmbed pe("pe", c, k, dim, rng);
  Tensor4 f = random_tensor(b, c, h, w, 23);

  auto loss = [&]() { return sumsq_tokens(pe.forward(f)); };
  Tokens out = pe.forward(f);
  pe.weight().zero_grad();
  pe.bias().zero_grad();
  Tensor4 df = pe.backward(out);  // d(0.5*||out||^2)/dout = out

  CHECK(gradcheck::param_max_rel_err(pe.weight(), pe.weight().grad, loss) < gradcheck::kTol);
  CHECK(gradcheck::param_max_rel_err(pe.bias(), pe.bias().grad, loss) < gradcheck::kTol);
  CHECK(gradcheck::value_max_rel_err(f.data.data(), f.data.size(), df.data.data(), loss) <
        gradcheck::kTol);
}

TEST_CASE("a zero-block encoder is exactly tokens plus the position table") {
  Rng rng = dpk::make_rng(31, "enc-test");
  tf::Encoder enc("enc", 6, 4, 0, 1, 4, rng);
  Tokens t = random_tokens(3, 2, 3, 4, 37);
  Tokens out = enc.forward(t);
  for (int bi = 0; bi < 3; ++bi) {
    Matrix expected = t.seq[bi] + enc.pos().value;
    CHECK((out.seq[bi] - expected).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("encoder rejects tokens that do not match its position table") {
  Rng rng = dpk::make_rng(31, "enc-test");
  tf::Encoder enc("enc", 6, 4, 0, 1, 4, rng);
  Tokens bad = random_tokens(1, 2, 2, 4, 37);  // 4 tokens, table has 6
  CHECK_THROWS_AS(enc.forward(bad), dpk::ShapeError);
}

TEST_CASE("encoder gradients match central finite differences") {
  const int n = 4, dim = 8;
  Rng rng = dpk::make_rng(41, "enc-fd");
  tf::Encoder enc("enc", n, dim, 1, 2, 4, rng);
  Tokens t = random_tokens(2, 2, 2, dim, 43);

  auto loss = [&]() { return sumsq_tokens(enc.forward(t)); };
  Tokens out = enc.forward(t);
  for (auto* p : enc.params()) p->zero_grad();
  Tokens dt = enc.backward(out);

  for (auto* p : enc.params()) {
    INFO("param ", p->name);
    CHECK(gradcheck::param_max_rel_err(*p, p->grad, loss) < gradcheck::kTol);
  }
  for (int bi = 0; bi < t.batch(); ++bi) {
    CHECK(gradcheck::value_max_rel_err(t.seq[bi].data(), t.seq[bi].size(), dt.seq[bi].data(),
                                       loss) < gradcheck::kTol);
  }
}

TEST_CASE("a zero-block decoder with identity head is exactly unpatchify") {
  const int rows = 2, cols = 3, c_out = 2, k = 2;
  const int dim = c_out * k * k;
  Rng rng = dpk::make_rng(51, "dec-test");
  tf::Decoder dec("dec", rows * cols, dim, 0, 1, 4, c_out, k, rng);
  dec.pos().value.setZero();
  dec.head().weight().value = Matrix::Identity(dim, dim);
  dec.head().bias().value.setZero();
  Tokens t = random_tokens(2, rows, cols, dim, 53);
  Tensor4 out = dec.forward(t);
  CHECK(out.c == c_out);
  CHECK(out.h == rows * k);
  CHECK(out.w == cols * k);
  for (int bi = 0; bi < 2; ++bi) {
    for (int pi = 0; pi < rows; ++pi) {
      for (int pj = 0; pj < cols; ++pj) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < c_out; ++ci)
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj, ++col)
              CHECK(out.at(bi, ci, pi * k + ki, pj * k + kj) ==
                    t.seq[bi](pi * cols + pj, col));
      }
    }
  }
}

TEST_CASE("decoder gradients match central finite differences") {
  const int rows = 2, cols = 2, dim = 8, c_out = 3, k = 2;
  Rng rng = dpk::make_rng(61, "dec-fd");
  tf::Decoder dec("dec", rows * cols, dim, 1, 2, 4, c_out, k, rng);
  Tokens t = random_tokens(2, rows, cols, dim, 63);

  auto loss = [&]() { return sumsq_tensor(dec.forward(t)); };
  Tensor4 out = dec.forward(t);
  for (auto* p : dec.params()) p->zero_grad();
  Tokens dt = dec.backward(out);

  for (auto* p : dec.params()) {
    INFO("param ", p->name);
    CHECK(gradcheck::param_max_rel_err(*p, p->grad, loss) < gradcheck::kTol);
  }
  for (int bi = 0; bi < t.batch(); ++bi) {
    CHECK(gradcheck::value_max_rel_err(t.seq[bi].data(), t.seq[bi].size(), dt.seq[bi].data(),
                                       loss) < gradcheck::kTol);
  }
}

TEST_CASE("stitch takes the teacher rows exactly at the masked positions") {
  const int b = 3, rows = 4, cols = 4, dim = 6;
  Tokens s = random_tokens(b, rows, cols, dim, 71);
  Tokens t = random_tokens(b, rows, cols, dim, 73);
  auto masks = draw_masks(b, rows, cols, 0.5, 75);
  Tokens h = tf::stitch(s, t, masks);
  for (int bi = 0; bi < b; ++bi) {
    int teacher_rows = 0;
    for (int n = 0; n < rows * cols; ++n) {
      const Matrix& expect = masks[bi].flags[n] ? t.seq[bi] : s.seq[bi];
      CHECK((h.seq[bi].row(n) - expect.row(n)).cwiseAbs().maxCoeff() == 0.0);
      if (masks[bi].flags[n]) ++teacher_rows;
    }
    CHECK(teacher_rows == masks[bi].realized_count());
  }

  // Degenerate ratios: all-student / all-teacher.
  Rng rng = dpk::make_rng(77, "stitch-test");
  std::vector<MaskPattern> none(b, dpk::random_mask(rows, cols, 0.0, rng));
  std::vector<MaskPattern> all(b, dpk::random_mask(rows, cols, 1.0, rng));
  Tokens hs = tf::stitch(s, t, none);
  Tokens ht = tf::stitch(s, t, all);
  for (int bi = 0; bi < b; ++bi) {
    CHECK((hs.seq[bi] - s.seq[bi]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ht.seq[bi] - t.seq[bi]).cwiseAbs().maxCoeff() == 0.0);
  }

  // Stitching twice with the same mask is idempotent.
  Tokens h2 = tf::stitch(h, t, masks);
  for (int bi = 0; bi < b; ++bi)
    CHECK((h2.seq[bi] - h.seq[bi]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stitch validates its shapes") {
  Tokens s = random_tokens(2, 2, 2, 4, 81);
  Tokens t = random_tokens(2, 2, 2, 5, 83);  // dim mismatch
  auto masks = draw_masks(2, 2, 2, 0.5, 85);
  CHECK_THROWS_AS(tf::stitch(s, t, masks), dpk::ShapeError);
  auto short_masks = draw_masks(1, 2, 2, 0.5, 85);
  Tokens t2 = random_tokens(2, 2, 2, 4, 83);
  CHECK_THROWS_AS(tf::stitch(s, t2, short_masks), dpk::ShapeError);
}

TEST_CASE("alternative fillers write zeros or the learnable token") {
  const int b = 2, rows = 3, cols = 3, dim = 4;
  Tokens s = random_tokens(b, rows, cols, dim, 91);
  auto masks = draw_masks(b, rows, cols, 0.4, 93);

  Tokens zf = tf::fill_masked(s, masks, tf::Filler::kZero);
  Param tok("tok", 1, dim);
  tok.value.setRandom();
  Tokens lf = tf::fill_masked(s, masks, tf::Filler::kLearnable, nullptr, &tok);
  for (int bi = 0; bi < b; ++bi) {
    for (int n = 0; n < rows * cols; ++n) {
      if (masks[bi].flags[n]) {
        CHECK(zf.seq[bi].row(n).cwiseAbs().maxCoeff() == 0.0);
        CHECK((lf.seq[bi].row(n) - tok.value.row(0)).cwiseAbs().maxCoeff() == 0.0);
      } else {
        CHECK((zf.seq[bi].row(n) - s.seq[bi].row(n)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((lf.seq[bi].row(n) - s.seq[bi].row(n)).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
  // The teacher filler is exactly stitch.
  Tokens t = random_tokens(b, rows, cols, dim, 95);
  Tokens via_fill = tf::fill_masked(s, masks, tf::Filler::kTeacher, &t);
  Tokens via_stitch = tf::stitch(s, t, masks);
  for (int bi = 0; bi < b; ++bi)
    CHECK((via_fill.seq[bi] - via_stitch.seq[bi]).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(tf::fill_masked(s, masks, tf::Filler::kTeacher, nullptr), dpk::ConfigError);
  CHECK_THROWS_AS(tf::fill_masked(s, masks, tf::Filler::kLearnable, nullptr, nullptr),
                  dpk::ConfigError);
}

TEST_CASE("stitch backward blocks gradient at masked positions") {
  const int b = 2, rows = 4, cols = 4, dim = 5;
  Tokens dh = random_tokens(b, rows, cols, dim, 101);
  auto masks = draw_masks(b, rows, cols, 0.5, 103);
  Param tok("tok", 1, dim);
  tok.zero_grad();
  Tokens ds = tf::stitch_backward(dh, masks, &tok);
  Matrix expected_tok_grad = Matrix::Zero(1, dim);
  for (int bi = 0; bi < b; ++bi) {
    for (int n = 0; n < rows * cols; ++n) {
      if (masks[bi].flags[n]) {
        CHECK(ds.seq[bi].row(n).cwiseAbs().maxCoeff() == 0.0);
        expected_tok_grad.row(0) += dh.seq[bi].row(n);
      } else {
        CHECK((ds.seq[bi].row(n) - dh.seq[bi].row(n)).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
  CHECK((tok.grad - expected_tok_grad).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

tf::TransformConfig small_config(tf::Variant v) {
  tf::TransformConfig cfg;
  cfg.variant = v;
  cfg.patch_size = 2;
  cfg.dim = 8;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

}  // namespace

TEST_CASE("stage transform produces the teacher stage shape for every variant") {
  const int b = 2, c_s = 4, c_t = 6, h = 4, w = 4;
  Tensor4 fs = random_tensor(b, c_s, h, w, 111);
  Tensor4 ft = random_tensor(b, c_t, h, w, 113);
  auto masks = draw_masks(b, 2, 2, 0.5, 115);
  for (auto v : {tf::Variant::kEncoderDecoder, tf::Variant::kMlpDecoder, tf::Variant::kConv}) {
    tf::StageTransform st(small_config(v), c_s, c_t, h, w, 117, 1);
    Tensor4 pred = st.forward(fs, ft, masks);
    CHECK(pred.b == b);
    CHECK(pred.c == c_t);
    CHECK(pred.h == h);
    CHECK(pred.w == w);
    for (double x : pred.data) CHECK(std::isfinite(x));
    Tensor4 dfs = st.backward(pred);
    CHECK(dfs.b == b);
    CHECK(dfs.c == c_s);
    CHECK(dfs.h == h);
    CHECK(dfs.w == w);
  }
}

TEST_CASE("stage transform initialization is reproducible from the seed") {
  auto cfg = small_config(tf::Variant::kEncoderDecoder);
  tf::StageTransform a(cfg, 4, 6, 4, 4, 999, 2);
  tf::StageTransform b(cfg, 4, 6, 4, 4, 999, 2);
  tf::StageTransform c(cfg, 4, 6, 4, 4, 1000, 2);
  CHECK(dpk::nn::params_checksum(a.params()) == dpk::nn::params_checksum(b.params()));
  CHECK(dpk::nn::params_checksum(a.params()) != dpk::nn::params_checksum(c.params()));
}

TEST_CASE("every stage-transform parameter is flagged training-only") {
  for (auto v : {tf::Variant::kEncoderDecoder, tf::Variant::kMlpDecoder, tf::Variant::kConv}) {
    tf::StageTransform st(small_config(v), 4, 6, 4, 4, 7, 1);
    for (auto* p : st.params()) CHECK(p->training_only);
  }
}

TEST_CASE("stage transform end-to-end gradients match central finite differences") {
  const int b = 2, c_s = 3, c_t = 4, h = 4, w = 4;
  Tensor4 fs = random_tensor(b, c_s, h, w, 121);
  Tensor4 ft = random_tensor(b, c_t, h, w, 123);
  auto masks = draw_masks(b, 2, 2, 0.5, 125);
  for (auto v : {tf::Variant::kEncoderDecoder, tf::Variant::kMlpDecoder, tf::Variant::kConv}) {
    tf::StageTransform st(small_config(v), c_s, c_t, h, w, 127, 1);
    auto loss = [&]() { return sumsq_tensor(st.forward(fs, ft, masks)); };
    Tensor4 pred = st.forward(fs, ft, masks);
    for (auto* p : st.params()) p->zero_grad();
    Tensor4 dfs = st.backward(pred);
    CHECK(gradcheck::value_max_rel_err(fs.data.data(), fs.data.size(), dfs.data.data(), loss,
                                       32) < gradcheck::kTol);
    // Spot-check the trainable parameters.
    int checked = 0;
    for (auto* p : st.trainable_params()) {
      if (++checked > 4) break;
      INFO("param ", p->name);
      CHECK(gradcheck::param_max_rel_err(*p, p->grad, loss, 16) < gradcheck::kTol);
    }
  }
}

TEST_CASE("teacher-side transform modules never receive gradient") {
  const int b = 2, c_s = 3, c_t = 4, h = 4, w = 4;
  Tensor4 fs = random_tensor(b, c_s, h, w, 131);
  Tensor4 ft = random_tensor(b, c_t, h, w, 133);
  auto masks = draw_masks(b, 2, 2, 0.5, 135);
  tf::StageTransform st(small_config(tf::Variant::kEncoderDecoder), c_s, c_t, h, w, 137, 1);
  Tensor4 pred = st.forward(fs, ft, masks);
  for (auto* p : st.params()) p->zero_grad();
  st.backward(pred);

  auto trainable = st.trainable_params();
  auto is_trainable = [&](Param* p) {
    return std::find(trainable.begin(), trainable.end(), p) != trainable.end();
  };
  int detached = 0;
  for (auto* p : st.params()) {
    if (is_trainable(p)) continue;
    ++detached;
    CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(detached > 0);
}

TEST_CASE("learnable-filler gradients flow into the mask token") {
  const int b = 2, c_s = 3, c_t = 4, h = 4, w = 4;
  Tensor4 fs = random_tensor(b, c_s, h, w, 141);
  Tensor4 ft = random_tensor(b, c_t, h, w, 143);
  auto masks = draw_masks(b, 2, 2, 0.5, 145);
  tf::StageTransform st(small_config(tf::Variant::kEncoderDecoder), c_s, c_t, h, w, 147, 1);
  auto loss = [&]() {
    return sumsq_tensor(st.forward(fs, ft, masks, tf::Filler::kLearnable));
  };
  Tensor4 pred = st.forward(fs, ft, masks, tf::Filler::kLearnable);
  for (auto* p : st.params()) p->zero_grad();
  st.backward(pred);
  Param* mask_token = nullptr;
  for (auto* p : st.trainable_params())
    if (p->name.find("mask_token") != std::string::npos) mask_token = p;
  REQUIRE(mask_token != nullptr);
  CHECK(mask_token->grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(gradcheck::param_max_rel_err(*mask_token, mask_token->grad, loss) < gradcheck::kTol);
}

TEST_CASE("parse helpers accept the documented names only") {
  CHECK(tf::parse_variant("encoder_decoder") == tf::Variant::kEncoderDecoder);
  CHECK(tf::parse_variant("mlp_decoder") == tf::Variant::kMlpDecoder);
  CHECK(tf::parse_variant("conv") == tf::Variant::kConv);
  CHECK_THROWS_AS(tf::parse_variant("transformer"), dpk::ConfigError);
  CHECK(tf::parse_filler("teacher") == tf::Filler::kTeacher);
  CHECK(tf::parse_filler("zero") == tf::Filler::kZero);
  CHECK(tf::parse_filler("learnable") == tf::Filler::kLearnable);
  CHECK_THROWS_AS(tf::parse_filler("mean"), dpk::ConfigError);
}
