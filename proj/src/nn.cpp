#include "dpk/nn.hpp"

#include <cmath>
#include <cstring>

namespace dpk::nn {

Matrix Tensor4::flatten_rows() const {
  Matrix out(b, c * h * w);
  const size_t per = static_cast<size_t>(c) * h * w;
  for (int bi = 0; bi < b; ++bi) {
    for (size_t j = 0; j < per; ++j) {
      out(bi, static_cast<Eigen::Index>(j)) = data[bi * per + j];
    }
  }
  return out;
}

Tokens Tokens::zeros(int batch, int rows, int cols, int dim) {
  Tokens t;
  t.rows = rows;
  t.cols = cols;
  t.dim = dim;
  t.seq.assign(batch, Matrix::Zero(rows * cols, dim));
  return t;
}

void init_uniform(Param& p, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
      p.value(i, j) = dist(rng);
    }
  }
}

void init_normal(Param& p, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
      p.value(i, j) = dist(rng);
    }
  }
}

void init_kaiming(Param& p, int fan_in, Rng& rng) {
  init_normal(p, std::sqrt(2.0 / fan_in), rng);
}

// ----- Linear -----

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : w_(name + ".weight", in, out), b_(name + ".bias", 1, out) {
  init_kaiming(w_, in, rng);
}

std::vector<Matrix> Linear::forward_batch(const std::vector<Matrix>& xs) {
  cache_x_ = xs;
  std::vector<Matrix> ys;
  ys.reserve(xs.size());
  for (const auto& x : xs) {
    ys.push_back(forward(x));
  }
  return ys;
}

std::vector<Matrix> Linear::backward_batch(const std::vector<Matrix>& dys) {
  std::vector<Matrix> dxs;
  dxs.reserve(dys.size());
  for (size_t i = 0; i < dys.size(); ++i) {
    w_.grad.noalias() += cache_x_[i].transpose() * dys[i];
    b_.grad.row(0) += dys[i].colwise().sum();
    dxs.push_back(dys[i] * w_.value.transpose());
  }
  return dxs;
}

// ----- LayerNorm -----

LayerNorm::LayerNorm(const std::string& name, int dim, double eps)
    : gamma_(name + ".gamma", 1, dim), beta_(name + ".beta", 1, dim), eps_(eps) {
  gamma_.value.setOnes();
}

std::vector<Matrix> LayerNorm::forward_batch(const std::vector<Matrix>& xs) {
  cache_xhat_.clear();
  cache_inv_std_.clear();
  std::vector<Matrix> ys;
  ys.reserve(xs.size());
  for (const auto& x : xs) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Matrix xhat(n, d);
    Matrix inv_std(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = x.row(i).mean();
      const double var = (x.row(i).array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps_);
      xhat.row(i) = (x.row(i).array() - mu) * is;
      inv_std(i, 0) = is;
    }
    Matrix y = (xhat.array().rowwise() * gamma_.value.row(0).array()).rowwise() +
               beta_.value.row(0).array();
    cache_xhat_.push_back(std::move(xhat));
    cache_inv_std_.push_back(std::move(inv_std));
    ys.push_back(std::move(y));
  }
  return ys;
}

std::vector<Matrix> LayerNorm::backward_batch(const std::vector<Matrix>& dys) {
  std::vector<Matrix> dxs;
  dxs.reserve(dys.size());
  for (size_t s = 0; s < dys.size(); ++s) {
    const Matrix& dy = dys[s];
    const Matrix& xhat = cache_xhat_[s];
    const Matrix& inv_std = cache_inv_std_[s];
    gamma_.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    beta_.grad.row(0) += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gamma_.value.row(0).array();
    const Eigen::Index n = dy.rows(), d = dy.cols();
    Matrix dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m1 = dxhat.row(i).mean();
      const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
      dx.row(i) = ((dxhat.row(i).array() - m1) - xhat.row(i).array() * m2) * inv_std(i, 0);
    }
    dxs.push_back(std::move(dx));
  }
  return dxs;
}

// ----- GELU -----

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

std::vector<Matrix> Gelu::forward_batch(const std::vector<Matrix>& xs) {
  cache_x_ = xs;
  std::vector<Matrix> ys;
  ys.reserve(xs.size());
  for (const auto& x : xs) {
    ys.push_back(x.unaryExpr(
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }));
  }
  return ys;
}

std::vector<Matrix> Gelu::backward_batch(const std::vector<Matrix>& dys) {
  std::vector<Matrix> dxs;
  dxs.reserve(dys.size());
  for (size_t i = 0; i < dys.size(); ++i) {
    Matrix slope = cache_x_[i].unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      return cdf + v * pdf;
    });
    dxs.push_back(dys[i].cwiseProduct(slope));
  }
  return dxs;
}

// ----- MultiHeadSelfAttention -----

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, int dim, int heads, Rng& rng)
    : dim_(dim), heads_(heads), head_dim_(dim / heads),
      qkv_(name + ".qkv", dim, 3 * dim, rng), out_(name + ".out", dim, dim, rng) {
  if (dim % heads != 0) {
    throw ConfigError("attention dim must be divisible by heads");
  }
}

ParamRefs MultiHeadSelfAttention::params() {
  ParamRefs p = qkv_.params();
  for (auto* q : out_.params()) p.push_back(q);
  return p;
}

std::vector<Matrix> MultiHeadSelfAttention::forward_batch(const std::vector<Matrix>& xs) {
  std::vector<Matrix> qkv = qkv_.forward_batch(xs);
  cache_qkv_ = qkv;
  cache_attn_.assign(xs.size(), {});
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Matrix> concat(xs.size());
  for (size_t s = 0; s < xs.size(); ++s) {
    const Eigen::Index n = xs[s].rows();
    Matrix y(n, dim_);
    cache_attn_[s].resize(heads_);
    for (int h = 0; h < heads_; ++h) {
      auto q = qkv[s].middleCols(h * head_dim_, head_dim_);
      auto k = qkv[s].middleCols(dim_ + h * head_dim_, head_dim_);
      auto v = qkv[s].middleCols(2 * dim_ + h * head_dim_, head_dim_);
      Matrix scores = q * k.transpose() * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = scores.row(i).maxCoeff();
        Eigen::ArrayXd e = (scores.row(i).array() - mx).exp();
        scores.row(i) = e / e.sum();
      }
      cache_attn_[s][h] = scores;
      y.middleCols(h * head_dim_, head_dim_) = scores * v;
    }
    concat[s] = std::move(y);
  }
  return out_.forward_batch(concat);
}

std::vector<Matrix> MultiHeadSelfAttention::backward_batch(const std::vector<Matrix>& dys) {
  std::vector<Matrix> dconcat = out_.backward_batch(dys);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Matrix> dqkv(dys.size());
  for (size_t s = 0; s < dys.size(); ++s) {
    const Eigen::Index n = dconcat[s].rows();
    Matrix dq(n, dim_), dk(n, dim_), dv(n, dim_);
    for (int h = 0; h < heads_; ++h) {
      auto q = cache_qkv_[s].middleCols(h * head_dim_, head_dim_);
      auto k = cache_qkv_[s].middleCols(dim_ + h * head_dim_, head_dim_);
      auto v = cache_qkv_[s].middleCols(2 * dim_ + h * head_dim_, head_dim_);
      const Matrix& attn = cache_attn_[s][h];
      Matrix dyh = dconcat[s].middleCols(h * head_dim_, head_dim_);
      Matrix dattn = dyh * v.transpose();
      dv.middleCols(h * head_dim_, head_dim_) = attn.transpose() * dyh;
      // softmax backward row-wise
      Matrix dscores(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dot = dattn.row(i).dot(attn.row(i));
        dscores.row(i) = (dattn.row(i).array() - dot) * attn.row(i).array();
      }
      dscores *= scale;
      dq.middleCols(h * head_dim_, head_dim_) = dscores * k;
      dk.middleCols(h * head_dim_, head_dim_) = dscores.transpose() * q;
    }
    Matrix d(n, 3 * dim_);
    d << dq, dk, dv;
    dqkv[s] = std::move(d);
  }
  return qkv_.backward_batch(dqkv);
}

// ----- TransformerBlock -----

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng)
    : ln1_(name + ".ln1", dim), ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads, rng),
      fc1_(name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
      fc2_(name + ".mlp.fc2", dim * mlp_ratio, dim, rng) {}

ParamRefs TransformerBlock::params() {
  ParamRefs p;
  for (auto* q : ln1_.params()) p.push_back(q);
  for (auto* q : attn_.params()) p.push_back(q);
  for (auto* q : ln2_.params()) p.push_back(q);
  for (auto* q : fc1_.params()) p.push_back(q);
  for (auto* q : fc2_.params()) p.push_back(q);
  return p;
}

std::vector<Matrix> TransformerBlock::forward_batch(const std::vector<Matrix>& xs) {
  std::vector<Matrix> h = attn_.forward_batch(ln1_.forward_batch(xs));
  std::vector<Matrix> mid(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) mid[i] = xs[i] + h[i];
  std::vector<Matrix> m = fc2_.forward_batch(gelu_.forward_batch(fc1_.forward_batch(ln2_.forward_batch(mid))));
  std::vector<Matrix> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) out[i] = mid[i] + m[i];
  return out;
}

std::vector<Matrix> TransformerBlock::backward_batch(const std::vector<Matrix>& dys) {
  std::vector<Matrix> dmid =
      ln2_.backward_batch(fc1_.backward_batch(gelu_.backward_batch(fc2_.backward_batch(dys))));
  for (size_t i = 0; i < dys.size(); ++i) dmid[i] += dys[i];
  std::vector<Matrix> dx = ln1_.backward_batch(attn_.backward_batch(dmid));
  for (size_t i = 0; i < dys.size(); ++i) dx[i] += dmid[i];
  return dx;
}

// ----- Conv2d -----

Conv2d::Conv2d(const std::string& name, int cin, int cout, int ksize, int stride, int pad, Rng& rng)
    : cin_(cin), cout_(cout), k_(ksize), stride_(stride), pad_(pad),
      w_(name + ".weight", cin * ksize * ksize, cout), b_(name + ".bias", 1, cout) {
  init_kaiming(w_, cin * ksize * ksize, rng);
}

Tensor4 Conv2d::forward(const Tensor4& x) {
  if (x.c != cin_) {
    throw ShapeError("Conv2d: channel mismatch");
  }
  const int oh = out_h(x.h), ow = out_w(x.w);
  const int patch = cin_ * k_ * k_;
  cache_cols_.resize(static_cast<Eigen::Index>(x.b) * oh * ow, patch);
  cache_b_ = x.b;
  cache_h_ = x.h;
  cache_w_ = x.w;
  Eigen::Index row = 0;
  for (int bi = 0; bi < x.b; ++bi) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj, ++row) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < cin_; ++ci) {
          for (int ki = 0; ki < k_; ++ki) {
            const int ii = oi * stride_ - pad_ + ki;
            for (int kj = 0; kj < k_; ++kj, ++col) {
              const int jj = oj * stride_ - pad_ + kj;
              cache_cols_(row, col) =
                  (ii >= 0 && ii < x.h && jj >= 0 && jj < x.w) ? x.at(bi, ci, ii, jj) : 0.0;
            }
          }
        }
      }
    }
  }
  Matrix y = (cache_cols_ * w_.value).rowwise() + b_.value.row(0);
  Tensor4 out(x.b, cout_, oh, ow);
  row = 0;
  for (int bi = 0; bi < x.b; ++bi) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj, ++row) {
        for (int co = 0; co < cout_; ++co) {
          out.at(bi, co, oi, oj) = y(row, co);
        }
      }
    }
  }
  return out;
}

Tensor4 Conv2d::backward(const Tensor4& dy) {
  const int oh = dy.h, ow = dy.w;
  Matrix dy_mat(static_cast<Eigen::Index>(dy.b) * oh * ow, cout_);
  Eigen::Index row = 0;
  for (int bi = 0; bi < dy.b; ++bi) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj, ++row) {
        for (int co = 0; co < cout_; ++co) {
          dy_mat(row, co) = dy.at(bi, co, oi, oj);
        }
      }
    }
  }
  w_.grad.noalias() += cache_cols_.transpose() * dy_mat;
  b_.grad.row(0) += dy_mat.colwise().sum();
  Matrix dcols = dy_mat * w_.value.transpose();
  Tensor4 dx(cache_b_, cin_, cache_h_, cache_w_);
  row = 0;
  for (int bi = 0; bi < cache_b_; ++bi) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj, ++row) {
        Eigen::Index col = 0;
        for (int ci = 0; ci < cin_; ++ci) {
          for (int ki = 0; ki < k_; ++ki) {
            const int ii = oi * stride_ - pad_ + ki;
            for (int kj = 0; kj < k_; ++kj, ++col) {
              const int jj = oj * stride_ - pad_ + kj;
              if (ii >= 0 && ii < cache_h_ && jj >= 0 && jj < cache_w_) {
                dx.at(bi, ci, ii, jj) += dcols(row, col);
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

// ----- Relu4 -----

Tensor4 Relu4::forward(const Tensor4& x) {
  b_ = x.b; c_ = x.c; h_ = x.h; w_ = x.w;
  mask_.assign(x.size(), false);
  Tensor4 y = x;
  for (size_t i = 0; i < x.size(); ++i) {
    if (x.data[i] > 0.0) {
      mask_[i] = true;
    } else {
      y.data[i] = 0.0;
    }
  }
  return y;
}

Tensor4 Relu4::backward(const Tensor4& dy) {
  Tensor4 dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) {
    if (!mask_[i]) dx.data[i] = 0.0;
  }
  return dx;
}

// ----- AvgPool2 -----

Tensor4 AvgPool2::forward(const Tensor4& x) {
  b_ = x.b; c_ = x.c; h_ = x.h; w_ = x.w;
  Tensor4 y(x.b, x.c, x.h / 2, x.w / 2);
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < y.h; ++i)
        for (int j = 0; j < y.w; ++j)
          y.at(bi, ci, i, j) = 0.25 * (x.at(bi, ci, 2 * i, 2 * j) + x.at(bi, ci, 2 * i, 2 * j + 1) +
                                       x.at(bi, ci, 2 * i + 1, 2 * j) + x.at(bi, ci, 2 * i + 1, 2 * j + 1));
  return y;
}

Tensor4 AvgPool2::backward(const Tensor4& dy) {
  Tensor4 dx(b_, c_, h_, w_);
  for (int bi = 0; bi < dy.b; ++bi)
    for (int ci = 0; ci < dy.c; ++ci)
      for (int i = 0; i < dy.h; ++i)
        for (int j = 0; j < dy.w; ++j) {
          const double g = 0.25 * dy.at(bi, ci, i, j);
          dx.at(bi, ci, 2 * i, 2 * j) += g;
          dx.at(bi, ci, 2 * i, 2 * j + 1) += g;
          dx.at(bi, ci, 2 * i + 1, 2 * j) += g;
          dx.at(bi, ci, 2 * i + 1, 2 * j + 1) += g;
        }
  return dx;
}

// ----- GlobalAvgPool -----

Matrix GlobalAvgPool::forward(const Tensor4& x) {
  b_ = x.b; c_ = x.c; h_ = x.h; w_ = x.w;
  Matrix y = Matrix::Zero(x.b, x.c);
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci) {
      double acc = 0.0;
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) acc += x.at(bi, ci, i, j);
      y(bi, ci) = acc / (x.h * x.w);
    }
  return y;
}

Tensor4 GlobalAvgPool::backward(const Matrix& dy) {
  Tensor4 dx(b_, c_, h_, w_);
  const double inv = 1.0 / (h_ * w_);
  for (int bi = 0; bi < b_; ++bi)
    for (int ci = 0; ci < c_; ++ci) {
      const double g = dy(bi, ci) * inv;
      for (int i = 0; i < h_; ++i)
        for (int j = 0; j < w_; ++j) dx.at(bi, ci, i, j) = g;
    }
  return dx;
}

double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits) {
  const Eigen::Index n = logits.rows();
  double loss = 0.0;
  if (dlogits) dlogits->resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    loss -= std::log(e(labels[i]) / z);
    if (dlogits) {
      dlogits->row(i) = (e / z).matrix().transpose() / static_cast<double>(n);
      (*dlogits)(i, labels[i]) -= 1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

// ----- SGD -----

SgdOptimizer::SgdOptimizer(ParamRefs params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto* p : params_) {
    velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void SgdOptimizer::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Matrix g = p.grad;
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value;
    velocity_[i] = momentum_ * velocity_[i] + g;
    p.value -= lr_ * velocity_[i];
  }
}

double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs <= 0) return lr0;
  const double t = static_cast<double>(epoch) / total_epochs;
  return 0.5 * lr0 * (1.0 + std::cos(t * 3.14159265358979323846));
}

uint64_t params_checksum(const ParamRefs& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const double v = p->value(i, j);
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
          h ^= b;
          h *= 0x100000001b3ULL;
        }
      }
    }
  }
  return h;
}

}  // namespace dpk::nn
