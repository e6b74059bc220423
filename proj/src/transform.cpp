#include "dpk/transform.hpp"

#include <algorithm>
#include <cmath>

namespace dpk::transform {

bool StageTransform::executed_flag = false;

Variant parse_variant(const std::string& name) {
  if (name == "encoder_decoder") return Variant::kEncoderDecoder;
  if (name == "mlp_decoder") return Variant::kMlpDecoder;
  if (name == "conv") return Variant::kConv;
  throw ConfigError("unknown transform variant: " + name);
}

Filler parse_filler(const std::string& name) {
  if (name == "teacher") return Filler::kTeacher;
  if (name == "zero") return Filler::kZero;
  if (name == "learnable") return Filler::kLearnable;
  throw ConfigError("unknown filler: " + name);
}

int default_patch_size(int h, int w, int max_tokens) {
  for (int k = 1; k <= std::max(h, w); ++k) {
    if (h % k != 0 || w % k != 0) continue;
    if ((h / k) * (w / k) <= max_tokens) return k;
  }
  return std::max(h, w);
}

// ----- PatchEmbed -----

PatchEmbed::PatchEmbed(const std::string& name, int c_in, int k, int dim, Rng& rng)
    : c_in_(c_in), k_(k), dim_(dim), w_(name + ".weight", c_in * k * k, dim), b_(name + ".bias", 1, dim) {
  nn::init_kaiming(w_, c_in * k * k, rng);
}

Tokens PatchEmbed::forward(const Tensor4& f) {
  if (f.h % k_ != 0 || f.w % k_ != 0) {
    throw ConfigError("patchify: patch size must divide the feature map");
  }
  if (f.c != c_in_) {
    throw ShapeError("patchify: channel mismatch");
  }
  const int rows = f.h / k_, cols = f.w / k_;
  const int n = rows * cols;
  const int patch = c_in_ * k_ * k_;
  cache_patches_.assign(f.b, Matrix(n, patch));
  cache_h_ = f.h;
  cache_w_ = f.w;
  Tokens out;
  out.rows = rows;
  out.cols = cols;
  out.dim = dim_;
  out.seq.resize(f.b);
  for (int bi = 0; bi < f.b; ++bi) {
    Matrix& p = cache_patches_[bi];
    for (int pi = 0; pi < rows; ++pi) {
      for (int pj = 0; pj < cols; ++pj) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < c_in_; ++ci)
          for (int ki = 0; ki < k_; ++ki)
            for (int kj = 0; kj < k_; ++kj, ++col)
              p(pi * cols + pj, col) = f.at(bi, ci, pi * k_ + ki, pj * k_ + kj);
      }
    }
    out.seq[bi] = (p * w_.value).rowwise() + b_.value.row(0);
  }
  return out;
}

Tensor4 PatchEmbed::backward(const Tokens& dtokens) {
  const int rows = dtokens.rows, cols = dtokens.cols;
  Tensor4 df(dtokens.batch(), c_in_, cache_h_, cache_w_);
  for (int bi = 0; bi < dtokens.batch(); ++bi) {
    w_.grad.noalias() += cache_patches_[bi].transpose() * dtokens.seq[bi];
    b_.grad.row(0) += dtokens.seq[bi].colwise().sum();
    Matrix dp = dtokens.seq[bi] * w_.value.transpose();
    for (int pi = 0; pi < rows; ++pi) {
      for (int pj = 0; pj < cols; ++pj) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < c_in_; ++ci)
          for (int ki = 0; ki < k_; ++ki)
            for (int kj = 0; kj < k_; ++kj, ++col)
              df.at(bi, ci, pi * k_ + ki, pj * k_ + kj) = dp(pi * cols + pj, col);
      }
    }
  }
  return df;
}

// ----- Encoder -----

Encoder::Encoder(const std::string& name, int n_tokens, int dim, int blocks, int heads,
                 int mlp_ratio, Rng& rng)
    : pos_(name + ".pos", n_tokens, dim) {
  nn::init_normal(pos_, 0.02, rng);
  blocks_.reserve(blocks);
  for (int i = 0; i < blocks; ++i) {
    blocks_.emplace_back(name + ".block" + std::to_string(i), dim, heads, mlp_ratio, rng);
  }
}

ParamRefs Encoder::params() {
  ParamRefs p{&pos_};
  for (auto& b : blocks_)
    for (auto* q : b.params()) p.push_back(q);
  return p;
}

Tokens Encoder::forward(const Tokens& t) {
  if (t.dim != pos_.value.cols() || t.count() != pos_.value.rows()) {
    throw ShapeError("encode: token shape does not match position table");
  }
  Tokens out = t;
  for (auto& m : out.seq) m += pos_.value;
  std::vector<Matrix> xs = out.seq;
  for (auto& b : blocks_) xs = b.forward_batch(xs);
  out.seq = std::move(xs);
  return out;
}

Tokens Encoder::backward(const Tokens& dt) {
  std::vector<Matrix> dxs = dt.seq;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dxs = it->backward_batch(dxs);
  for (const auto& dx : dxs) pos_.grad += dx;
  Tokens out = dt;
  out.seq = std::move(dxs);
  return out;
}

// ----- Decoder -----

Decoder::Decoder(const std::string& name, int n_tokens, int dim, int blocks, int heads,
                 int mlp_ratio, int c_out, int k, Rng& rng)
    : pos_(name + ".pos", n_tokens, dim), head_(name + ".head", dim, c_out * k * k, rng),
      c_out_(c_out), k_(k) {
  nn::init_normal(pos_, 0.02, rng);
  blocks_.reserve(blocks);
  for (int i = 0; i < blocks; ++i) {
    blocks_.emplace_back(name + ".block" + std::to_string(i), dim, heads, mlp_ratio, rng);
  }
}

ParamRefs Decoder::params() {
  ParamRefs p{&pos_};
  for (auto& b : blocks_)
    for (auto* q : b.params()) p.push_back(q);
  for (auto* q : head_.params()) p.push_back(q);
  return p;
}

Tensor4 Decoder::forward(const Tokens& hybrid) {
  cache_rows_ = hybrid.rows;
  cache_cols_ = hybrid.cols;
  cache_dim_ = hybrid.dim;
  std::vector<Matrix> xs = hybrid.seq;
  for (auto& m : xs) m += pos_.value;
  for (auto& b : blocks_) xs = b.forward_batch(xs);
  std::vector<Matrix> ys = head_.forward_batch(xs);
  const int h = hybrid.rows * k_, w = hybrid.cols * k_;
  Tensor4 out(hybrid.batch(), c_out_, h, w);
  for (int bi = 0; bi < hybrid.batch(); ++bi) {
    for (int pi = 0; pi < hybrid.rows; ++pi) {
      for (int pj = 0; pj < hybrid.cols; ++pj) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < c_out_; ++ci)
          for (int ki = 0; ki < k_; ++ki)
            for (int kj = 0; kj < k_; ++kj, ++col)
              out.at(bi, ci, pi * k_ + ki, pj * k_ + kj) = ys[bi](pi * hybrid.cols + pj, col);
      }
    }
  }
  return out;
}

Tokens Decoder::backward(const Tensor4& df) {
  const int rows = cache_rows_, cols = cache_cols_;
  std::vector<Matrix> dys(df.b, Matrix(rows * cols, c_out_ * k_ * k_));
  for (int bi = 0; bi < df.b; ++bi) {
    for (int pi = 0; pi < rows; ++pi) {
      for (int pj = 0; pj < cols; ++pj) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < c_out_; ++ci)
          for (int ki = 0; ki < k_; ++ki)
            for (int kj = 0; kj < k_; ++kj, ++col)
              dys[bi](pi * cols + pj, col) = df.at(bi, ci, pi * k_ + ki, pj * k_ + kj);
      }
    }
  }
  std::vector<Matrix> dxs = head_.backward_batch(dys);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dxs = it->backward_batch(dxs);
  for (const auto& dx : dxs) pos_.grad += dx;
  Tokens out;
  out.rows = rows;
  out.cols = cols;
  out.dim = cache_dim_;
  out.seq = std::move(dxs);
  return out;
}

// ----- stitch / fill_masked -----

namespace {

void check_stitch_shapes(const Tokens& student, const std::vector<MaskPattern>& masks) {
  if (static_cast<int>(masks.size()) != student.batch()) {
    throw ShapeError("stitch: need one mask per sample");
  }
  for (const auto& m : masks) {
    if (m.size() != student.count()) {
      throw ShapeError("stitch: mask length does not match token count");
    }
  }
}

}  // namespace

Tokens stitch(const Tokens& student, const Tokens& teacher, const std::vector<MaskPattern>& masks) {
  if (teacher.batch() != student.batch() || teacher.count() != student.count() ||
      teacher.dim != student.dim) {
    throw ShapeError("stitch: student/teacher token shapes differ");
  }
  check_stitch_shapes(student, masks);
  Tokens out = student;
  for (int bi = 0; bi < student.batch(); ++bi) {
    for (int n = 0; n < student.count(); ++n) {
      if (masks[bi].flags[n]) out.seq[bi].row(n) = teacher.seq[bi].row(n);
    }
  }
  return out;
}

Tokens fill_masked(const Tokens& student, const std::vector<MaskPattern>& masks, Filler filler,
                   const Tokens* teacher, const Param* learnable_token) {
  if (filler == Filler::kTeacher) {
    if (!teacher) throw ConfigError("fill_masked: teacher filler requires teacher tokens");
    return stitch(student, *teacher, masks);
  }
  check_stitch_shapes(student, masks);
  Tokens out = student;
  for (int bi = 0; bi < student.batch(); ++bi) {
    for (int n = 0; n < student.count(); ++n) {
      if (!masks[bi].flags[n]) continue;
      if (filler == Filler::kZero) {
        out.seq[bi].row(n).setZero();
      } else {
        if (!learnable_token) throw ConfigError("fill_masked: learnable filler requires a token");
        out.seq[bi].row(n) = learnable_token->value.row(0);
      }
    }
  }
  return out;
}

Tokens stitch_backward(const Tokens& dhybrid, const std::vector<MaskPattern>& masks,
                       Param* learnable_token) {
  Tokens ds = dhybrid;
  for (int bi = 0; bi < dhybrid.batch(); ++bi) {
    for (int n = 0; n < dhybrid.count(); ++n) {
      if (masks[bi].flags[n]) {
        if (learnable_token) learnable_token->grad.row(0) += dhybrid.seq[bi].row(n);
        ds.seq[bi].row(n).setZero();
      }
    }
  }
  return ds;
}

// ----- StageTransform -----

StageTransform::StageTransform(const TransformConfig& cfg, int c_student, int c_teacher, int h,
                               int w, uint64_t seed, int stage_id)
    : cfg_(cfg), c_teacher_(c_teacher), h_(h), w_(w) {
  const std::string name = "transform.stage" + std::to_string(stage_id);
  Rng rng = make_rng(seed, name);
  k_ = cfg.patch_size > 0 ? cfg.patch_size : default_patch_size(h, w);
  if (h % k_ != 0 || w % k_ != 0) {
    throw ConfigError("transform: patch size must divide the stage feature map");
  }
  rows_ = h / k_;
  cols_ = w / k_;
  dim_ = cfg.dim > 0 ? cfg.dim : std::min(c_teacher, 256);
  const int n = rows_ * cols_;
  if (cfg.variant == Variant::kConv) {
    conv1_ = nn::Conv2d(name + ".conv1", c_student, dim_, 3, 1, 1, rng);
    conv2_ = nn::Conv2d(name + ".conv2", dim_, dim_, 3, 1, 1, rng);
    conv3_ = nn::Conv2d(name + ".conv3", dim_, dim_, 3, 1, 1, rng);
    pool_h_ = std::max(1, h / 2);
    pool_w_ = std::max(1, w / 2);
    conv_head_ = nn::Linear(name + ".head", dim_ * pool_h_ * pool_w_, c_teacher * h * w, rng);
  } else {
    patch_s_ = PatchEmbed(name + ".patch_s", c_student, k_, dim_, rng);
    patch_t_ = PatchEmbed(name + ".patch_t", c_teacher, k_, dim_, rng);
    if (cfg.variant == Variant::kEncoderDecoder) {
      enc_s_ = Encoder(name + ".enc_s", n, dim_, cfg.encoder_blocks, cfg.heads, cfg.mlp_ratio, rng);
      enc_t_ = Encoder(name + ".enc_t", n, dim_, cfg.encoder_blocks, cfg.heads, cfg.mlp_ratio, rng);
    }
    dec_ = Decoder(name + ".dec", n, dim_, cfg.decoder_blocks, cfg.heads, cfg.mlp_ratio, c_teacher,
                   k_, rng);
    mask_token_ = Param(name + ".mask_token", 1, dim_);
    nn::init_normal(mask_token_, 0.02, rng);
  }
  for (auto* p : params()) p->training_only = true;
}

ParamRefs StageTransform::params() {
  ParamRefs p;
  auto add = [&p](ParamRefs refs) {
    for (auto* r : refs) p.push_back(r);
  };
  if (cfg_.variant == Variant::kConv) {
    add(conv1_.params());
    add(conv2_.params());
    add(conv3_.params());
    add(conv_head_.params());
  } else {
    add(patch_s_.params());
    add(patch_t_.params());
    if (cfg_.variant == Variant::kEncoderDecoder) {
      add(enc_s_.params());
      add(enc_t_.params());
    }
    add(dec_.params());
    p.push_back(&mask_token_);
  }
  return p;
}

ParamRefs StageTransform::trainable_params() {
  ParamRefs p;
  auto add = [&p](ParamRefs refs) {
    for (auto* r : refs) p.push_back(r);
  };
  if (cfg_.variant == Variant::kConv) {
    return params();
  }
  // Teacher-side patch embedding and encoder are gradient-detached and
  // never update.
  add(patch_s_.params());
  if (cfg_.variant == Variant::kEncoderDecoder) {
    add(enc_s_.params());
  }
  add(dec_.params());
  p.push_back(&mask_token_);
  return p;
}

Tensor4 StageTransform::forward(const Tensor4& f_student, const Tensor4& f_teacher,
                                const std::vector<MaskPattern>& masks, Filler filler) {
  executed_flag = true;
  if (cfg_.variant == Variant::kConv) {
    Tensor4 x = relu1_.forward(conv1_.forward(f_student));
    x = relu2_.forward(conv2_.forward(x));
    x = relu3_.forward(conv3_.forward(x));
    Tensor4 pooled = (x.h >= 2 && x.w >= 2) ? pool_.forward(x) : x;
    cache_b_ = pooled.b;
    cache_pool_flat_ = pooled.flatten_rows();
    Matrix y = conv_head_.forward_batch({cache_pool_flat_})[0];
    Tensor4 out(f_student.b, c_teacher_, h_, w_);
    const size_t per = static_cast<size_t>(c_teacher_) * h_ * w_;
    for (int bi = 0; bi < out.b; ++bi)
      for (size_t j = 0; j < per; ++j) out.data[bi * per + j] = y(bi, static_cast<Eigen::Index>(j));
    return out;
  }
  cache_masks_ = masks;
  cache_filler_ = filler;
  Tokens tok_s = patch_s_.forward(f_student);
  if (cfg_.variant == Variant::kEncoderDecoder) {
    tok_s = enc_s_.forward(tok_s);
  }
  Tokens hybrid;
  if (filler == Filler::kTeacher) {
    Tokens tok_t = patch_t_.forward(f_teacher);
    if (cfg_.variant == Variant::kEncoderDecoder) {
      tok_t = enc_t_.forward(tok_t);
    }
    hybrid = stitch(tok_s, tok_t, masks);
  } else {
    hybrid = fill_masked(tok_s, masks, filler, nullptr, &mask_token_);
  }
  return dec_.forward(hybrid);
}

Tensor4 StageTransform::backward(const Tensor4& dpred) {
  executed_flag = true;
  if (cfg_.variant == Variant::kConv) {
    Matrix dy(cache_b_, static_cast<Eigen::Index>(c_teacher_) * h_ * w_);
    const size_t per = static_cast<size_t>(c_teacher_) * h_ * w_;
    for (int bi = 0; bi < cache_b_; ++bi)
      for (size_t j = 0; j < per; ++j) dy(bi, static_cast<Eigen::Index>(j)) = dpred.data[bi * per + j];
    std::vector<Matrix> dpool_flat = conv_head_.backward_batch({dy});
    // un-flatten into the pooled tensor shape
    Tensor4 dpool(cache_b_, dim_, pool_h_, pool_w_);
    const size_t pper = static_cast<size_t>(dim_) * pool_h_ * pool_w_;
    for (int bi = 0; bi < cache_b_; ++bi)
      for (size_t j = 0; j < pper; ++j) dpool.data[bi * pper + j] = dpool_flat[0](bi, static_cast<Eigen::Index>(j));
    Tensor4 dx = (h_ >= 2 && w_ >= 2) ? pool_.backward(dpool) : dpool;
    dx = conv3_.backward(relu3_.backward(dx));
    dx = conv2_.backward(relu2_.backward(dx));
    return conv1_.backward(relu1_.backward(dx));
  }
  Tokens dhybrid = dec_.backward(dpred);
  Param* token = cache_filler_ == Filler::kLearnable ? &mask_token_ : nullptr;
  Tokens dtok_s = stitch_backward(dhybrid, cache_masks_, token);
  if (cfg_.variant == Variant::kEncoderDecoder) {
    dtok_s = enc_s_.backward(dtok_s);
  }
  return patch_s_.backward(dtok_s);
}

}  // namespace dpk::transform
