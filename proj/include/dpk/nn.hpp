#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dpk/errors.hpp"
#include "dpk/rng.hpp"

namespace dpk::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Batched spatial activations (B x C x H x W), stored row-major per image.
struct Tensor4 {
  int b = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int b_, int c_, int h_, int w_)
      : b(b_), c(c_), h(h_), w(w_), data(static_cast<size_t>(b_) * c_ * h_ * w_, 0.0) {}

  size_t idx(int bi, int ci, int hi, int wi) const {
    return ((static_cast<size_t>(bi) * c + ci) * h + hi) * w + wi;
  }
  double& at(int bi, int ci, int hi, int wi) { return data[idx(bi, ci, hi, wi)]; }
  double at(int bi, int ci, int hi, int wi) const { return data[idx(bi, ci, hi, wi)]; }
  size_t size() const { return data.size(); }
  Tensor4 zeros_like() const { return Tensor4(b, c, h, w); }

  // Flatten each example to a row (B x C*H*W).
  Matrix flatten_rows() const;
};

// Batched token sequences: B matrices of shape N x dim over a rows x cols grid.
struct Tokens {
  int rows = 0, cols = 0, dim = 0;
  std::vector<Matrix> seq;

  int count() const { return rows * cols; }
  int batch() const { return static_cast<int>(seq.size()); }
  static Tokens zeros(int batch, int rows, int cols, int dim);
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool training_only = false;  // dropped from the deployed student

  Param() = default;
  Param(std::string n, int r, int c) : name(std::move(n)), value(Matrix::Zero(r, c)), grad(Matrix::Zero(r, c)) {}
  void zero_grad() { grad.setZero(); }
};

using ParamRefs = std::vector<Param*>;

void init_uniform(Param& p, double limit, Rng& rng);
void init_normal(Param& p, double stddev, Rng& rng);
// Kaiming-style fan-in init for a (fan_in x fan_out) weight.
void init_kaiming(Param& p, int fan_in, Rng& rng);

// ----- token-sequence layers (per-sample N x d matrices) -----

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);

  Matrix forward(const Matrix& x) const { return (x * w_.value).rowwise() + b_.value.row(0); }
  std::vector<Matrix> forward_batch(const std::vector<Matrix>& xs);
  // dys aligned with the last forward_batch inputs; accumulates grads.
  std::vector<Matrix> backward_batch(const std::vector<Matrix>& dys);

  ParamRefs params() { return {&w_, &b_}; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  Param w_, b_;
  std::vector<Matrix> cache_x_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, double eps = 1e-6);

  std::vector<Matrix> forward_batch(const std::vector<Matrix>& xs);
  std::vector<Matrix> backward_batch(const std::vector<Matrix>& dys);
  ParamRefs params() { return {&gamma_, &beta_}; }

 private:
  Param gamma_, beta_;
  double eps_ = 1e-6;
  std::vector<Matrix> cache_xhat_;
  std::vector<Matrix> cache_inv_std_;  // N x 1 per sample
};

class Gelu {
 public:
  std::vector<Matrix> forward_batch(const std::vector<Matrix>& xs);
  std::vector<Matrix> backward_batch(const std::vector<Matrix>& dys);

 private:
  std::vector<Matrix> cache_x_;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, int dim, int heads, Rng& rng);

  std::vector<Matrix> forward_batch(const std::vector<Matrix>& xs);
  std::vector<Matrix> backward_batch(const std::vector<Matrix>& dys);
  ParamRefs params();

 private:
  int dim_ = 0, heads_ = 0, head_dim_ = 0;
  Linear qkv_, out_;
  std::vector<Matrix> cache_qkv_;
  std::vector<std::vector<Matrix>> cache_attn_;  // per sample, per head N x N
};

// Pre-LN transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng);

  std::vector<Matrix> forward_batch(const std::vector<Matrix>& xs);
  std::vector<Matrix> backward_batch(const std::vector<Matrix>& dys);
  ParamRefs params();

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadSelfAttention attn_;
  Linear fc1_, fc2_;
  Gelu gelu_;
};

// ----- spatial layers (Tensor4) -----

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int ksize, int stride, int pad, Rng& rng);

  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& dy);
  ParamRefs params() { return {&w_, &b_}; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  int out_h(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
  int out_w(int w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }

 private:
  int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 0, pad_ = 0;
  Param w_;  // (cin*k*k) x cout
  Param b_;  // 1 x cout
  Matrix cache_cols_;  // im2col of last input, (B*OH*OW) x (cin*k*k)
  int cache_b_ = 0, cache_h_ = 0, cache_w_ = 0;
};

class Relu4 {
 public:
  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& dy);

 private:
  std::vector<bool> mask_;
  int b_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

class AvgPool2 {
 public:
  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& dy);

 private:
  int b_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// Mean over the spatial extent: (B x C x H x W) -> (B x C).
class GlobalAvgPool {
 public:
  Matrix forward(const Tensor4& x);
  Tensor4 backward(const Matrix& dy);

 private:
  int b_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// Softmax cross-entropy with integer labels; returns mean loss and the
// gradient w.r.t. logits.
double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits);

// SGD with momentum, optional weight decay; one velocity buffer per param.
class SgdOptimizer {
 public:
  SgdOptimizer(ParamRefs params, double lr, double momentum, double weight_decay);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  ParamRefs params_;
  std::vector<Matrix> velocity_;
  double lr_, momentum_, weight_decay_;
};

// Cosine decay from lr0 to 0 over total_epochs.
double cosine_lr(double lr0, int epoch, int total_epochs);

// FNV-1a over the raw bytes of every parameter, in order; used for the
// frozen-teacher contract.
uint64_t params_checksum(const ParamRefs& params);

}  // namespace dpk::nn
