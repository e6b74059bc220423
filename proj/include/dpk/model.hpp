#pragma once

#include <array>
#include <cstdint>
#include <map>

#include "dpk/nn.hpp"

namespace dpk::model {

using nn::Matrix;
using nn::ParamRefs;
using nn::Tensor4;

// Four-stage convolutional classifier with a width multiplier. Stage
// feature maps (after the activation, before pooling) are exposed for
// distillation; spatial sizes halve between stages.
class ToyConvNet {
 public:
  static constexpr int kStages = 4;

  ToyConvNet(int in_channels, int classes, double width, int base_channels, uint64_t seed);

  // Runs the network; if `stages` is non-null it receives the tapped
  // per-stage feature maps.
  Matrix forward(const Tensor4& images, std::array<Tensor4, kStages>* stages = nullptr);

  // Backpropagates the logits gradient plus optional extra gradients
  // injected at stage taps (keyed by stage index, 0-based).
  void backward(const Matrix& dlogits, const std::map<int, Tensor4>& stage_grads = {});

  ParamRefs params();
  int stage_channels(int stage) const { return channels_[stage]; }
  int classes() const { return classes_; }

 private:
  int classes_ = 0;
  std::array<int, kStages> channels_{};
  std::array<nn::Conv2d, kStages> conv_a_;
  std::array<nn::Conv2d, kStages> conv_b_;
  std::array<nn::Relu4, kStages> relu_a_;
  std::array<nn::Relu4, kStages> relu_b_;
  std::array<nn::AvgPool2, kStages - 1> pool_;
  nn::GlobalAvgPool gap_;
  nn::Linear fc_;
};

}  // namespace dpk::model
