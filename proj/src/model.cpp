#include "dpk/model.hpp"

#include <cmath>

#include "dpk/rng.hpp"

namespace dpk::model {

ToyConvNet::ToyConvNet(int in_channels, int classes, double width, int base_channels, uint64_t seed)
    : classes_(classes) {
  Rng rng = make_rng(seed, "toy-convnet");
  int cin = in_channels;
  for (int s = 0; s < kStages; ++s) {
    channels_[s] = std::max(2, static_cast<int>(std::lround(base_channels * width)) << s);
    const std::string name = "backbone.stage" + std::to_string(s);
    conv_a_[s] = nn::Conv2d(name + ".conv_a", cin, channels_[s], 3, 1, 1, rng);
    conv_b_[s] = nn::Conv2d(name + ".conv_b", channels_[s], channels_[s], 3, 1, 1, rng);
    cin = channels_[s];
  }
  fc_ = nn::Linear("backbone.fc", channels_[kStages - 1], classes, rng);
}

Matrix ToyConvNet::forward(const Tensor4& images, std::array<Tensor4, kStages>* stages) {
  Tensor4 x = images;
  for (int s = 0; s < kStages; ++s) {
    x = relu_a_[s].forward(conv_a_[s].forward(x));
    x = relu_b_[s].forward(conv_b_[s].forward(x));
    if (stages) (*stages)[s] = x;
    if (s < kStages - 1) x = pool_[s].forward(x);
  }
  Matrix pooled = gap_.forward(x);
  return fc_.forward_batch({pooled})[0];
}

void ToyConvNet::backward(const Matrix& dlogits, const std::map<int, Tensor4>& stage_grads) {
  Tensor4 dx = gap_.backward(fc_.backward_batch({dlogits})[0]);
  for (int s = kStages - 1; s >= 0; --s) {
    if (s < kStages - 1) dx = pool_[s].backward(dx);
    auto it = stage_grads.find(s);
    if (it != stage_grads.end()) {
      for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += it->second.data[i];
    }
    dx = conv_a_[s].backward(relu_a_[s].backward(conv_b_[s].backward(relu_b_[s].backward(dx))));
  }
}

ParamRefs ToyConvNet::params() {
  ParamRefs p;
  for (int s = 0; s < kStages; ++s) {
    for (auto* q : conv_a_[s].params()) p.push_back(q);
    for (auto* q : conv_b_[s].params()) p.push_back(q);
  }
  for (auto* q : fc_.params()) p.push_back(q);
  return p;
}

}  // namespace dpk::model
