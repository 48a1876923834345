// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/nn/param_store.hpp"
#include "diffsynth/rng.hpp"

namespace diffsynth {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Shape-preserving elementwise pieces
// ---------------------------------------------------------------------------

template <typename Real>
Real softplus(Real x) {
  if (x > Real(20)) return x;
  if (x < Real(-20)) return std::exp(x);
  return std::log(Real(1) + std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= Real(0)) {
    const Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

/// Leaky rectifier with the 0.2 slope used throughout the decoder blocks.
template <typename Real>
struct LeakyRelu {
  static constexpr Real kSlope = Real(0.2);
  Matrix<Real> input;

  Matrix<Real> forward(const Matrix<Real>& x) {
    input = x;
    Matrix<Real> out = x;
    for (auto& v : out.data)
      if (v < Real(0)) v *= kSlope;
    return out;
  }
  Matrix<Real> backward(const Matrix<Real>& grad_out) const {
    Matrix<Real> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (input.data[i] < Real(0)) g.data[i] *= kSlope;
    return g;
  }
};

template <typename Real>
struct Relu {
  Matrix<Real> input;

  Matrix<Real> forward(const Matrix<Real>& x) {
    input = x;
    Matrix<Real> out = x;
    for (auto& v : out.data)
      if (v < Real(0)) v = Real(0);
    return out;
  }
  Matrix<Real> backward(const Matrix<Real>& grad_out) const {
    Matrix<Real> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (input.data[i] < Real(0)) g.data[i] = Real(0);
    return g;
  }
};

/// Inverted dropout: active in training only, identity in evaluation.
template <typename Real>
struct Dropout {
  double rate = 0.0;
  std::vector<Real> mask;  // scale factors from the last training forward

  Matrix<Real> forward(const Matrix<Real>& x, Mode mode, Rng& rng) {
    if (mode == Mode::Eval || rate <= 0.0) {
      mask.clear();
      return x;
    }
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    mask.resize(x.data.size());
    Matrix<Real> out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      mask[i] = rng.bernoulli(rate) ? Real(0) : keep_scale;
      out.data[i] *= mask[i];
    }
    return out;
  }
  Matrix<Real> backward(const Matrix<Real>& grad_out) const {
    if (mask.empty()) return grad_out;
    Matrix<Real> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= mask[i];
    return g;
  }
};

// ---------------------------------------------------------------------------
// Nearest-neighbor temporal resampling
// ---------------------------------------------------------------------------

template <typename Real>
Matrix<Real> upsample_nearest(const Matrix<Real>& x, std::size_t factor) {
  Matrix<Real> out(x.rows * factor, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t)
    for (std::size_t j = 0; j < factor; ++j)
      std::copy(x.row(t), x.row(t) + x.cols, out.row(t * factor + j));
  return out;
}

template <typename Real>
Matrix<Real> upsample_nearest_backward(const Matrix<Real>& grad_out, std::size_t factor) {
  Matrix<Real> g(grad_out.rows / factor, grad_out.cols);
  for (std::size_t t = 0; t < g.rows; ++t)
    for (std::size_t j = 0; j < factor; ++j) {
      const Real* src = grad_out.row(t * factor + j);
      Real* dst = g.row(t);
      for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
    }
  return g;
}

// ---------------------------------------------------------------------------
// 1-D convolution (cross-correlation) over the time axis
// ---------------------------------------------------------------------------

/// Weight layout is [kernel][in][out] so the innermost loop runs contiguously
/// over output channels. Padding is dilation * (kernel - 1) / 2, which keeps
/// stride-1 outputs the input length and makes strided outputs ceil(T / stride).
template <typename Real>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore<Real>& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, Rng& init, std::size_t stride = 1, std::size_t dilation = 1)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        kernel_(kernel),
        stride_(stride),
        dilation_(dilation),
        pad_(dilation * (kernel - 1) / 2) {
    require(kernel % 2 == 1, "conv1d: kernel width must be odd");
    const double limit = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
    w_ = store.add_uniform(name + ".weight", {kernel, in_ch, out_ch}, init, limit);
    b_ = store.add_uniform(name + ".bias", {out_ch}, init, limit);
  }

  std::size_t out_len(std::size_t in_len) const {
    return (in_len + 2 * pad_ - dilation_ * (kernel_ - 1) - 1) / stride_ + 1;
  }
  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x) {
    require(x.cols == in_ch_, "conv1d: input channel mismatch");
    input_ = x;
    const auto w = store.value(w_);
    const auto b = store.value(b_);
    Matrix<Real> out(out_len(x.rows), out_ch_);
    for (std::size_t t = 0; t < out.rows; ++t) {
      Real* orow = out.row(t);
      for (std::size_t c = 0; c < out_ch_; ++c) orow[c] = b[c];
      const long long base = static_cast<long long>(t * stride_) - static_cast<long long>(pad_);
      for (std::size_t k = 0; k < kernel_; ++k) {
        const long long ti = base + static_cast<long long>(k * dilation_);
        if (ti < 0 || ti >= static_cast<long long>(x.rows)) continue;
        const Real* xrow = x.row(static_cast<std::size_t>(ti));
        const Real* wk = w.data() + k * in_ch_ * out_ch_;
        for (std::size_t ci = 0; ci < in_ch_; ++ci) {
          const Real a = xrow[ci];
          if (a == Real(0)) continue;
          const Real* wrow = wk + ci * out_ch_;
          for (std::size_t c = 0; c < out_ch_; ++c) orow[c] += a * wrow[c];
        }
      }
    }
    return out;
  }

  /// Returns the input gradient; accumulates weight and bias gradients.
  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    const auto w = store.entry(w_).value;
    auto& gw = store.entry(w_).grad;
    auto& gb = store.entry(b_).grad;
    Matrix<Real> gin(input_.rows, in_ch_);
    for (std::size_t t = 0; t < grad_out.rows; ++t) {
      const Real* go = grad_out.row(t);
      for (std::size_t c = 0; c < out_ch_; ++c) gb[c] += go[c];
      const long long base = static_cast<long long>(t * stride_) - static_cast<long long>(pad_);
      for (std::size_t k = 0; k < kernel_; ++k) {
        const long long ti = base + static_cast<long long>(k * dilation_);
        if (ti < 0 || ti >= static_cast<long long>(input_.rows)) continue;
        const Real* xrow = input_.row(static_cast<std::size_t>(ti));
        Real* grow = gin.row(static_cast<std::size_t>(ti));
        const Real* wk = w.data() + k * in_ch_ * out_ch_;
        Real* gwk = gw.data() + k * in_ch_ * out_ch_;
        for (std::size_t ci = 0; ci < in_ch_; ++ci) {
          const Real a = xrow[ci];
          const Real* wrow = wk + ci * out_ch_;
          Real* gwrow = gwk + ci * out_ch_;
          Real acc = 0;
          for (std::size_t c = 0; c < out_ch_; ++c) {
            acc += wrow[c] * go[c];
            gwrow[c] += a * go[c];
          }
          grow[ci] += acc;
        }
      }
    }
    return gin;
  }

 private:
  std::size_t in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1, dilation_ = 1, pad_ = 0;
  std::size_t w_ = 0, b_ = 0;
  Matrix<Real> input_;
};

// ---------------------------------------------------------------------------
// Dense projection applied per time step
// ---------------------------------------------------------------------------

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<Real>& store, const std::string& name, std::size_t in_dim,
         std::size_t out_dim, Rng& init)
      : in_(in_dim), out_(out_dim) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(in_dim));
    w_ = store.add_uniform(name + ".weight", {in_dim, out_dim}, init, limit);
    b_ = store.add_uniform(name + ".bias", {out_dim}, init, limit);
  }

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x) {
    require(x.cols == in_, "linear: input dim mismatch");
    input_ = x;
    const auto w = store.value(w_);
    const auto b = store.value(b_);
    Matrix<Real> out(x.rows, out_);
    for (std::size_t t = 0; t < x.rows; ++t) {
      Real* orow = out.row(t);
      for (std::size_t c = 0; c < out_; ++c) orow[c] = b[c];
      const Real* xrow = x.row(t);
      for (std::size_t i = 0; i < in_; ++i) {
        const Real a = xrow[i];
        const Real* wrow = w.data() + i * out_;
        for (std::size_t c = 0; c < out_; ++c) orow[c] += a * wrow[c];
      }
    }
    return out;
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    const auto w = store.entry(w_).value;
    auto& gw = store.entry(w_).grad;
    auto& gb = store.entry(b_).grad;
    Matrix<Real> gin(input_.rows, in_);
    for (std::size_t t = 0; t < grad_out.rows; ++t) {
      const Real* go = grad_out.row(t);
      const Real* xrow = input_.row(t);
      Real* grow = gin.row(t);
      for (std::size_t c = 0; c < out_; ++c) gb[c] += go[c];
      for (std::size_t i = 0; i < in_; ++i) {
        const Real* wrow = w.data() + i * out_;
        Real* gwrow = gw.data() + i * out_;
        Real acc = 0;
        for (std::size_t c = 0; c < out_; ++c) {
          acc += wrow[c] * go[c];
          gwrow[c] += xrow[i] * go[c];
        }
        grow[i] += acc;
      }
    }
    return gin;
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  std::size_t w_ = 0, b_ = 0;
  Matrix<Real> input_;
};

// ---------------------------------------------------------------------------
// Token embedding
// ---------------------------------------------------------------------------

template <typename Real>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore<Real>& store, const std::string& name, std::size_t vocab, std::size_t dim,
            Rng& init)
      : vocab_(vocab), dim_(dim) {
    table_ = store.add_uniform(name + ".table", {vocab, dim}, init, 0.5);
  }

  Matrix<Real> forward(const ParamStore<Real>& store, const std::vector<int>& ids) {
    for (const int id : ids)
      require(id >= 0 && static_cast<std::size_t>(id) < vocab_,
              "embedding: unknown token id " + std::to_string(id));
    ids_ = ids;
    const auto tab = store.value(table_);
    Matrix<Real> out(ids.size(), dim_);
    for (std::size_t t = 0; t < ids.size(); ++t)
      std::copy(tab.begin() + ids[t] * dim_, tab.begin() + (ids[t] + 1) * dim_, out.row(t));
    return out;
  }

  void backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    auto& g = store.entry(table_).grad;
    for (std::size_t t = 0; t < ids_.size(); ++t) {
      const Real* go = grad_out.row(t);
      Real* grow = g.data() + ids_[t] * dim_;
      for (std::size_t c = 0; c < dim_; ++c) grow[c] += go[c];
    }
  }

 private:
  std::size_t vocab_ = 0, dim_ = 0;
  std::size_t table_ = 0;
  std::vector<int> ids_;
};

// ---------------------------------------------------------------------------
// Batch normalization over the time axis (per channel)
// ---------------------------------------------------------------------------

template <typename Real>
class BatchNorm1d {
 public:
  static constexpr double kMomentum = 0.99;
  static constexpr double kEps = 1e-5;

  BatchNorm1d() = default;
  BatchNorm1d(ParamStore<Real>& store, const std::string& name, std::size_t channels)
      : ch_(channels) {
    gamma_ = store.add(name + ".gamma", {channels});
    beta_ = store.add(name + ".beta", {channels});
    run_mean_ = store.add(name + ".running_mean", {channels}, /*trainable=*/false);
    run_var_ = store.add(name + ".running_var", {channels}, /*trainable=*/false);
    auto g = store.value(gamma_);
    std::fill(g.begin(), g.end(), Real(1));
    auto rv = store.value(run_var_);
    std::fill(rv.begin(), rv.end(), Real(1));
  }

  Matrix<Real> forward(ParamStore<Real>& store, const Matrix<Real>& x, Mode mode) {
    require(x.cols == ch_, "batchnorm: channel mismatch");
    require(x.rows >= 1, "batchnorm: empty input");
    mode_ = mode;
    const auto gamma = store.value(gamma_);
    const auto beta = store.value(beta_);
    Matrix<Real> out(x.rows, x.cols);
    if (mode == Mode::Eval) {
      const auto rm = store.value(run_mean_);
      const auto rv = store.value(run_var_);
      inv_std_.resize(ch_);
      for (std::size_t c = 0; c < ch_; ++c)
        inv_std_[c] = Real(1) / std::sqrt(rv[c] + static_cast<Real>(kEps));
      for (std::size_t t = 0; t < x.rows; ++t)
        for (std::size_t c = 0; c < ch_; ++c)
          out.at(t, c) = gamma[c] * (x.at(t, c) - rm[c]) * inv_std_[c] + beta[c];
      return out;
    }
    const Real n = static_cast<Real>(x.rows);
    mean_.assign(ch_, Real(0));
    inv_std_.assign(ch_, Real(0));
    for (std::size_t t = 0; t < x.rows; ++t)
      for (std::size_t c = 0; c < ch_; ++c) mean_[c] += x.at(t, c);
    for (auto& m : mean_) m /= n;
    std::vector<Real> var(ch_, Real(0));
    for (std::size_t t = 0; t < x.rows; ++t)
      for (std::size_t c = 0; c < ch_; ++c) {
        const Real d = x.at(t, c) - mean_[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= n;
    for (std::size_t c = 0; c < ch_; ++c)
      inv_std_[c] = Real(1) / std::sqrt(var[c] + static_cast<Real>(kEps));
    xhat_ = Matrix<Real>(x.rows, x.cols);
    for (std::size_t t = 0; t < x.rows; ++t)
      for (std::size_t c = 0; c < ch_; ++c) {
        xhat_.at(t, c) = (x.at(t, c) - mean_[c]) * inv_std_[c];
        out.at(t, c) = gamma[c] * xhat_.at(t, c) + beta[c];
      }
    auto rm = store.value(run_mean_);
    auto rv = store.value(run_var_);
    for (std::size_t c = 0; c < ch_; ++c) {
      rm[c] = static_cast<Real>(kMomentum) * rm[c] +
              static_cast<Real>(1.0 - kMomentum) * mean_[c];
      rv[c] = static_cast<Real>(kMomentum) * rv[c] + static_cast<Real>(1.0 - kMomentum) * var[c];
    }
    return out;
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    const auto gamma = store.value(gamma_);
    auto& ggamma = store.entry(gamma_).grad;
    auto& gbeta = store.entry(beta_).grad;
    Matrix<Real> gin(grad_out.rows, grad_out.cols);
    if (mode_ == Mode::Eval) {
      for (std::size_t t = 0; t < grad_out.rows; ++t)
        for (std::size_t c = 0; c < ch_; ++c)
          gin.at(t, c) = grad_out.at(t, c) * gamma[c] * inv_std_[c];
      return gin;
    }
    const Real n = static_cast<Real>(grad_out.rows);
    std::vector<Real> sum_dy(ch_, Real(0)), sum_dy_xhat(ch_, Real(0));
    for (std::size_t t = 0; t < grad_out.rows; ++t)
      for (std::size_t c = 0; c < ch_; ++c) {
        const Real dy = grad_out.at(t, c);
        sum_dy[c] += dy;
        sum_dy_xhat[c] += dy * xhat_.at(t, c);
        ggamma[c] += dy * xhat_.at(t, c);
        gbeta[c] += dy;
      }
    for (std::size_t t = 0; t < grad_out.rows; ++t)
      for (std::size_t c = 0; c < ch_; ++c) {
        const Real dxhat = grad_out.at(t, c) * gamma[c];
        gin.at(t, c) = inv_std_[c] * (dxhat - (gamma[c] / n) * sum_dy[c] -
                                      xhat_.at(t, c) * (gamma[c] / n) * sum_dy_xhat[c]);
      }
    return gin;
  }

 private:
  std::size_t ch_ = 0;
  std::size_t gamma_ = 0, beta_ = 0, run_mean_ = 0, run_var_ = 0;
  Mode mode_ = Mode::Train;
  std::vector<Real> mean_, inv_std_;
  Matrix<Real> xhat_;
};

}  // namespace diffsynth
