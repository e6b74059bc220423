#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpk/masking.hpp"
#include "dpk/nn.hpp"

namespace dpk::transform {

using nn::Matrix;
using nn::Param;
using nn::ParamRefs;
using nn::Tensor4;
using nn::Tokens;

enum class Variant { kEncoderDecoder, kMlpDecoder, kConv };
enum class Filler { kTeacher, kZero, kLearnable };

Variant parse_variant(const std::string& name);
Filler parse_filler(const std::string& name);

// Smallest patch size dividing both H and W whose token count stays within
// the cap; keeps attention cost bounded at any stage resolution.
int default_patch_size(int h, int w, int max_tokens = 64);

struct TransformConfig {
  Variant variant = Variant::kEncoderDecoder;
  int patch_size = 0;  // 0 = auto
  int dim = 0;         // 0 = teacher channels, capped at 256
  int encoder_blocks = 6;
  int decoder_blocks = 6;
  int heads = 4;
  int mlp_ratio = 4;
};

// k x k stride-k convolution over the feature map, i.e. a per-patch linear
// projection to the token dimension.
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(const std::string& name, int c_in, int k, int dim, Rng& rng);

  Tokens forward(const Tensor4& f);
  Tensor4 backward(const Tokens& dtokens);
  ParamRefs params() { return {&w_, &b_}; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  int patch_size() const { return k_; }

 private:
  int c_in_ = 0, k_ = 0, dim_ = 0;
  Param w_, b_;
  std::vector<Matrix> cache_patches_;
  int cache_h_ = 0, cache_w_ = 0;
};

// Learnable position table plus a stack of pre-LN transformer blocks; with
// zero blocks this is exactly `tokens + position table`.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& name, int n_tokens, int dim, int blocks, int heads, int mlp_ratio, Rng& rng);

  Tokens forward(const Tokens& t);
  Tokens backward(const Tokens& dt);
  ParamRefs params();
  Param& pos() { return pos_; }

 private:
  Param pos_;  // n_tokens x dim
  std::vector<nn::TransformerBlock> blocks_;
};

// Position table, transformer blocks, and a linear head back to
// (c_out * k * k) per token, unpatchified to the target feature shape.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& name, int n_tokens, int dim, int blocks, int heads, int mlp_ratio,
          int c_out, int k, Rng& rng);

  Tensor4 forward(const Tokens& hybrid);
  Tokens backward(const Tensor4& df);
  ParamRefs params();
  Param& pos() { return pos_; }
  nn::Linear& head() { return head_; }

 private:
  Param pos_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::Linear head_;
  int c_out_ = 0, k_ = 0;
  int cache_rows_ = 0, cache_cols_ = 0, cache_dim_ = 0;
};

// Hybrid tokens: teacher (or other filler) at masked positions, student
// elsewhere. Teacher side carries no gradient.
Tokens stitch(const Tokens& student, const Tokens& teacher, const std::vector<MaskPattern>& masks);

Tokens fill_masked(const Tokens& student, const std::vector<MaskPattern>& masks, Filler filler,
                   const Tokens* teacher = nullptr, const Param* learnable_token = nullptr);

// Gradient of stitch/fill_masked w.r.t. the student tokens: zero at masked
// positions. When the filler is learnable and a param is given, its grad
// accumulates the masked-position gradients.
Tokens stitch_backward(const Tokens& dhybrid, const std::vector<MaskPattern>& masks,
                       Param* learnable_token = nullptr);

// One distillation stage's transformation pipeline (Fig. 2 path from the
// student/teacher feature maps to the predicted teacher feature map).
class StageTransform {
 public:
  StageTransform(const TransformConfig& cfg, int c_student, int c_teacher, int h, int w,
                 uint64_t seed, int stage_id);

  // Student-path forward: returns the prediction with the teacher stage's
  // shape. The teacher path is evaluated without gradient.
  Tensor4 forward(const Tensor4& f_student, const Tensor4& f_teacher,
                  const std::vector<MaskPattern>& masks, Filler filler = Filler::kTeacher);
  // Backward from d(prediction) to d(student stage feature map).
  Tensor4 backward(const Tensor4& dpred);

  ParamRefs params();            // every parameter, all training-only
  ParamRefs trainable_params();  // excludes the detached teacher-side modules
  int grid_rows() const { return rows_; }
  int grid_cols() const { return cols_; }
  int token_dim() const { return dim_; }
  Variant variant() const { return cfg_.variant; }

  // Set while any forward/backward runs; the inference-purity check asserts
  // it never flips during evaluation.
  static bool executed_flag;

 private:
  TransformConfig cfg_;
  int rows_ = 0, cols_ = 0, dim_ = 0, k_ = 0;
  int c_teacher_ = 0, h_ = 0, w_ = 0;
  // encoder_decoder / mlp_decoder path
  PatchEmbed patch_s_, patch_t_;
  Encoder enc_s_, enc_t_;
  Decoder dec_;
  Param mask_token_;
  std::vector<MaskPattern> cache_masks_;
  Filler cache_filler_ = Filler::kTeacher;
  // conv path: three convolutions, a pooling layer and a linear head
  nn::Conv2d conv1_, conv2_, conv3_;
  nn::Relu4 relu1_, relu2_, relu3_;
  nn::AvgPool2 pool_;
  nn::Linear conv_head_;
  Matrix cache_pool_flat_;
  int cache_b_ = 0, pool_h_ = 0, pool_w_ = 0;
};

}  // namespace dpk::transform
