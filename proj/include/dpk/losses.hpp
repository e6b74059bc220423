#pragma once

#include <optional>
#include <string>

#include "dpk/masking.hpp"
#include "dpk/nn.hpp"

namespace dpk::losses {

using nn::Matrix;
using nn::Tensor4;

enum class Region { kFull, kNonMasked };

Region parse_region(const std::string& name);

struct LossWeights {
  double alpha = 0.8;
  double beta = 0.2;
  std::vector<double> stage_weights;  // default 1.0 per stage
};

// Temperature-softened KL(teacher || student), batch mean, scaled by tau^2
// when tau_squared is set. dstudent (optional) receives the gradient
// w.r.t. the student logits.
double logits_kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double tau,
                      bool tau_squared = true, Matrix* dstudent = nullptr);

// MSE over the selected region. For kNonMasked only elements in patches
// whose mask flag is false count; an empty unmasked set yields 0.
// The mask's grid tiles the feature map (patch size = H / mask.rows).
double feature_loss(const Tensor4& prediction, const Tensor4& target,
                    const std::vector<MaskPattern>* masks, Region region,
                    Tensor4* dprediction = nullptr);

double total_loss(double cls, double logits, double feat, const LossWeights& w);

struct FgdInputs {
  Tensor4 teacher_feat;   // B x C x H x W
  Tensor4 hybrid_feat;    // B x C x H x W
  Tensor4 fg_mask;        // B x 1 x H x W, entries in {0,1}
  Tensor4 spatial_attn;   // B x 1 x H x W
  Tensor4 channel_attn;   // B x C x 1 x 1
  double w_fg = 5e-5;
  double w_bg = 2.5e-5;
};

// Foreground/background weighted, attention-modulated squared error
// (detector distillation loss). dhybrid (optional) receives the gradient
// w.r.t. the hybrid features.
double fgd_masked_loss(const FgdInputs& in, Tensor4* dhybrid = nullptr);

}  // namespace dpk::losses
