// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/nn/ops.hpp"
#include "diffsynth/nn/param_store.hpp"

namespace diffsynth {

/// One recurrent direction of an LSTM with ZoneOut on both the hidden and
/// cell state. Training draws per-unit keep masks; evaluation blends with the
/// rate as mixing weight. Backward runs by full unrolling over the cached
/// step tensors.
template <typename Real>
class LstmDirection {
 public:
  LstmDirection() = default;
  LstmDirection(ParamStore<Real>& store, const std::string& name, std::size_t in_dim,
                std::size_t units, Rng& init)
      : in_(in_dim), units_(units) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(units));
    w_ih_ = store.add_uniform(name + ".w_ih", {in_dim, 4 * units}, init, limit);
    w_hh_ = store.add_uniform(name + ".w_hh", {units, 4 * units}, init, limit);
    b_ = store.add_uniform(name + ".bias", {4 * units}, init, limit);
  }

  std::size_t units() const { return units_; }

  /// Gate order within the 4H axis: input, forget, cell, output.
  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x, double zoneout_rate,
                       Mode mode, Rng& rng) {
    require(x.rows >= 1, "lstm: empty sequence");
    require(x.cols == in_, "lstm: input dim mismatch");
    const std::size_t steps = x.rows;
    const std::size_t h = units_;
    input_ = x;
    gates_ = Matrix<Real>(steps, 4 * h);
    c_new_ = Matrix<Real>(steps, h);
    tanh_c_ = Matrix<Real>(steps, h);
    h_state_ = Matrix<Real>(steps + 1, h);  // row 0 is the initial state
    c_state_ = Matrix<Real>(steps + 1, h);
    keep_h_ = Matrix<Real>(steps, h);
    keep_c_ = Matrix<Real>(steps, h);

    const auto wih = store.value(w_ih_);
    const auto whh = store.value(w_hh_);
    const auto bias = store.value(b_);

    for (std::size_t t = 0; t < steps; ++t) {
      Real* pre = gates_.row(t);
      for (std::size_t j = 0; j < 4 * h; ++j) pre[j] = bias[j];
      const Real* xrow = x.row(t);
      for (std::size_t i = 0; i < in_; ++i) {
        const Real a = xrow[i];
        const Real* wrow = wih.data() + i * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) pre[j] += a * wrow[j];
      }
      const Real* hprev = h_state_.row(t);
      for (std::size_t i = 0; i < h; ++i) {
        const Real a = hprev[i];
        const Real* wrow = whh.data() + i * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) pre[j] += a * wrow[j];
      }
      // Activations in place: the cache keeps post-activation gate values.
      for (std::size_t i = 0; i < h; ++i) pre[i] = sigmoid(pre[i]);
      for (std::size_t i = h; i < 2 * h; ++i) pre[i] = sigmoid(pre[i]);
      for (std::size_t i = 2 * h; i < 3 * h; ++i) pre[i] = std::tanh(pre[i]);
      for (std::size_t i = 3 * h; i < 4 * h; ++i) pre[i] = sigmoid(pre[i]);

      const Real* cprev = c_state_.row(t);
      Real* cn = c_new_.row(t);
      Real* tc = tanh_c_.row(t);
      Real* kh = keep_h_.row(t);
      Real* kc = keep_c_.row(t);
      Real* hout = h_state_.row(t + 1);
      Real* cout = c_state_.row(t + 1);
      for (std::size_t i = 0; i < h; ++i) {
        cn[i] = pre[h + i] * cprev[i] + pre[i] * pre[2 * h + i];
        tc[i] = std::tanh(cn[i]);
        const Real hn = pre[3 * h + i] * tc[i];
        if (mode == Mode::Train && zoneout_rate > 0.0) {
          kh[i] = rng.bernoulli(zoneout_rate) ? Real(1) : Real(0);
          kc[i] = rng.bernoulli(zoneout_rate) ? Real(1) : Real(0);
        } else {
          kh[i] = static_cast<Real>(zoneout_rate);
          kc[i] = static_cast<Real>(zoneout_rate);
        }
        hout[i] = kh[i] * hprev[i] + (Real(1) - kh[i]) * hn;
        cout[i] = kc[i] * cprev[i] + (Real(1) - kc[i]) * cn[i];
      }
    }

    Matrix<Real> out(steps, h);
    for (std::size_t t = 0; t < steps; ++t)
      std::copy(h_state_.row(t + 1), h_state_.row(t + 1) + h, out.row(t));
    return out;
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_h_seq) {
    const std::size_t steps = input_.rows;
    const std::size_t h = units_;
    const auto wih = store.value(w_ih_);
    const auto whh = store.value(w_hh_);
    auto& gwih = store.entry(w_ih_).grad;
    auto& gwhh = store.entry(w_hh_).grad;
    auto& gb = store.entry(b_).grad;

    Matrix<Real> gin(steps, in_);
    std::vector<Real> dh(h, Real(0)), dc(h, Real(0)), dpre(4 * h);
    for (std::size_t t = steps; t-- > 0;) {
      const Real* g = gates_.row(t);
      const Real* cprev = c_state_.row(t);
      const Real* hprev = h_state_.row(t);
      const Real* tc = tanh_c_.row(t);
      const Real* kh = keep_h_.row(t);
      const Real* kc = keep_c_.row(t);
      const Real* gout = grad_h_seq.row(t);
      for (std::size_t i = 0; i < h; ++i) {
        const Real dht = dh[i] + gout[i];
        const Real dhn = dht * (Real(1) - kh[i]);
        Real dcn = dc[i] * (Real(1) - kc[i]);
        dcn += dhn * g[3 * h + i] * (Real(1) - tc[i] * tc[i]);
        const Real d_o = dhn * tc[i];
        const Real d_f = dcn * cprev[i];
        const Real d_i = dcn * g[2 * h + i];
        const Real d_g = dcn * g[i];
        dpre[i] = d_i * g[i] * (Real(1) - g[i]);
        dpre[h + i] = d_f * g[h + i] * (Real(1) - g[h + i]);
        dpre[2 * h + i] = d_g * (Real(1) - g[2 * h + i] * g[2 * h + i]);
        dpre[3 * h + i] = d_o * g[3 * h + i] * (Real(1) - g[3 * h + i]);
        dh[i] = dht * kh[i];                       // carry to h_{t-1} (zoneout path)
        dc[i] = dc[i] * kc[i] + dcn * g[h + i];    // zoneout path + forget gate path
      }
      for (std::size_t j = 0; j < 4 * h; ++j) gb[j] += dpre[j];
      const Real* xrow = input_.row(t);
      Real* gxrow = gin.row(t);
      for (std::size_t i = 0; i < in_; ++i) {
        const Real* wrow = wih.data() + i * 4 * h;
        Real* gwrow = gwih.data() + i * 4 * h;
        Real acc = 0;
        for (std::size_t j = 0; j < 4 * h; ++j) {
          acc += wrow[j] * dpre[j];
          gwrow[j] += xrow[i] * dpre[j];
        }
        gxrow[i] = acc;
      }
      for (std::size_t i = 0; i < h; ++i) {
        const Real* wrow = whh.data() + i * 4 * h;
        Real* gwrow = gwhh.data() + i * 4 * h;
        Real acc = 0;
        for (std::size_t j = 0; j < 4 * h; ++j) {
          acc += wrow[j] * dpre[j];
          gwrow[j] += hprev[i] * dpre[j];
        }
        dh[i] += acc;
      }
    }
    return gin;
  }

 private:
  std::size_t in_ = 0, units_ = 0;
  std::size_t w_ih_ = 0, w_hh_ = 0, b_ = 0;
  Matrix<Real> input_, gates_, c_new_, tanh_c_, h_state_, c_state_, keep_h_, keep_c_;
};

/// Bidirectional LSTM: forward and reversed passes concatenated per position.
template <typename Real>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamStore<Real>& store, const std::string& name, std::size_t in_dim, std::size_t units,
         Rng& init)
      : fwd_(store, name + ".fwd", in_dim, units, init),
        bwd_(store, name + ".bwd", in_dim, units, init) {}

  std::size_t out_dim() const { return 2 * fwd_.units(); }

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x, double zoneout_rate,
                       Mode mode, Rng& rng) {
    const std::size_t steps = x.rows;
    const std::size_t h = fwd_.units();
    const Matrix<Real> hf = fwd_.forward(store, x, zoneout_rate, mode, rng);
    const Matrix<Real> xr = reversed(x);
    const Matrix<Real> hb = bwd_.forward(store, xr, zoneout_rate, mode, rng);
    Matrix<Real> out(steps, 2 * h);
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(hf.row(t), hf.row(t) + h, out.row(t));
      std::copy(hb.row(steps - 1 - t), hb.row(steps - 1 - t) + h, out.row(t) + h);
    }
    return out;
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    const std::size_t steps = grad_out.rows;
    const std::size_t h = fwd_.units();
    Matrix<Real> gf(steps, h), gb(steps, h);
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(grad_out.row(t), grad_out.row(t) + h, gf.row(t));
      std::copy(grad_out.row(t) + h, grad_out.row(t) + 2 * h, gb.row(steps - 1 - t));
    }
    Matrix<Real> gx = fwd_.backward(store, gf);
    const Matrix<Real> gxr = bwd_.backward(store, gb);
    for (std::size_t t = 0; t < steps; ++t) {
      const Real* src = gxr.row(steps - 1 - t);
      Real* dst = gx.row(t);
      for (std::size_t c = 0; c < gx.cols; ++c) dst[c] += src[c];
    }
    return gx;
  }

 private:
  static Matrix<Real> reversed(const Matrix<Real>& x) {
    Matrix<Real> r(x.rows, x.cols);
    for (std::size_t t = 0; t < x.rows; ++t)
      std::copy(x.row(x.rows - 1 - t), x.row(x.rows - 1 - t) + x.cols, r.row(t));
    return r;
  }

  LstmDirection<Real> fwd_, bwd_;
};

}  // namespace diffsynth
