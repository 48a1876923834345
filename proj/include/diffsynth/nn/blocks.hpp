// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "diffsynth/common.hpp"
#include "diffsynth/nn/film.hpp"
#include "diffsynth/nn/ops.hpp"
#include "diffsynth/nn/param_store.hpp"

namespace diffsynth {

/// Upsampling residual block: nearest-neighbor upsample by `factor`, a
/// residual pair of dilated convolutions (dilations 1/2), and a second
/// residual pair (dilations 4/8), with FiLM modulation applied at the
/// post-upsampling resolution. Output length is input length * factor.
/// FiLM may be omitted (mel head), in which case modulation is the identity.
template <typename Real>
class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(ParamStore<Real>& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
          std::size_t factor, Rng& init)
      : factor_(factor),
        conv_res_(store, name + ".conv_res", in_ch, out_ch, 1, init),
        conv_a_(store, name + ".conv_a", in_ch, out_ch, 3, init, 1, 1),
        conv_b_(store, name + ".conv_b", out_ch, out_ch, 3, init, 1, 2),
        conv_c_(store, name + ".conv_c", out_ch, out_ch, 3, init, 1, 4),
        conv_d_(store, name + ".conv_d", out_ch, out_ch, 3, init, 1, 8) {}

  std::size_t factor() const { return factor_; }

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x,
                       const FilmSignal<Real>* film) {
    has_film_ = film != nullptr;
    if (film) {
      require(film->scale.rows == x.rows * factor_,
              "upblock: film resolution does not match post-upsampling length");
      film_ = *film;
    }
    // Residual branch: upsample then 1x1.
    Matrix<Real> r = conv_res_.forward(store, upsample_nearest(x, factor_));
    // Main branch: nonlinearity, upsample, conv, film, nonlinearity, conv.
    Matrix<Real> m = act_in_.forward(x);
    m = conv_a_.forward(store, upsample_nearest(m, factor_));
    a_out_ = m;
    if (has_film_) m = film_modulate(m, film_);
    m = act_a_.forward(m);
    m = conv_b_.forward(store, m);
    x1_ = r;
    for (std::size_t i = 0; i < x1_.data.size(); ++i) x1_.data[i] += m.data[i];
    // Second residual group at full resolution.
    Matrix<Real> n = has_film_ ? film_modulate(x1_, film_) : x1_;
    n = act_c_.forward(n);
    n = conv_c_.forward(store, n);
    c_out_ = n;
    if (has_film_) n = film_modulate(n, film_);
    n = act_d_.forward(n);
    n = conv_d_.forward(store, n);
    Matrix<Real> out = x1_;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += n.data[i];
    return out;
  }

  /// Returns the input gradient; fills grad_film (when FiLM is present) with
  /// the summed scale/shift gradients from all modulation points.
  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out,
                        FilmSignal<Real>* grad_film) {
    if (has_film_) {
      grad_film->scale = Matrix<Real>(film_.scale.rows, film_.scale.cols);
      grad_film->shift = Matrix<Real>(film_.shift.rows, film_.shift.cols);
    }
    // out = x1 + conv_d(act_d(film(conv_c(act_c(film(x1))))))
    Matrix<Real> dn = conv_d_.backward(store, grad_out);
    dn = act_d_.backward(dn);
    Matrix<Real> dx1 = grad_out;
    if (has_film_) {
      Matrix<Real> tmp(dn.rows, dn.cols);
      film_modulate_backward(c_out_, film_, dn, tmp, *grad_film);
      dn = std::move(tmp);
    }
    dn = conv_c_.backward(store, dn);
    dn = act_c_.backward(dn);
    if (has_film_) {
      Matrix<Real> tmp(dn.rows, dn.cols);
      film_modulate_backward(x1_, film_, dn, tmp, *grad_film);
      dn = std::move(tmp);
    }
    for (std::size_t i = 0; i < dx1.data.size(); ++i) dx1.data[i] += dn.data[i];
    // x1 = conv_res(up(x)) + conv_b(act_a(film(conv_a(up(act_in(x))))))
    Matrix<Real> dm = conv_b_.backward(store, dx1);
    dm = act_a_.backward(dm);
    if (has_film_) {
      Matrix<Real> tmp(dm.rows, dm.cols);
      film_modulate_backward(a_out_, film_, dm, tmp, *grad_film);
      dm = std::move(tmp);
    }
    dm = upsample_nearest_backward(conv_a_.backward(store, dm), factor_);
    Matrix<Real> dx = act_in_.backward(dm);
    const Matrix<Real> dr = upsample_nearest_backward(conv_res_.backward(store, dx1), factor_);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dr.data[i];
    return dx;
  }

 private:
  std::size_t factor_ = 1;
  bool has_film_ = false;
  Conv1d<Real> conv_res_, conv_a_, conv_b_, conv_c_, conv_d_;
  LeakyRelu<Real> act_in_, act_a_, act_c_, act_d_;
  FilmSignal<Real> film_;
  Matrix<Real> a_out_, c_out_, x1_;
};

/// Downsampling residual block: strided convolution stack with dilations
/// 1/2/4 plus a strided 1x1 residual. Output length is ceil(input / factor);
/// odd lengths are covered by the convolution padding.
template <typename Real>
class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(ParamStore<Real>& store, const std::string& name, std::size_t in_ch,
            std::size_t out_ch, std::size_t factor, Rng& init)
      : factor_(factor),
        conv_res_(store, name + ".conv_res", in_ch, out_ch, 1, init, factor),
        conv_1_(store, name + ".conv_1", in_ch, out_ch, 3, init, factor, 1),
        conv_2_(store, name + ".conv_2", out_ch, out_ch, 3, init, 1, 2),
        conv_3_(store, name + ".conv_3", out_ch, out_ch, 3, init, 1, 4) {}

  std::size_t factor() const { return factor_; }

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& x) {
    const Matrix<Real> r = conv_res_.forward(store, x);
    Matrix<Real> m = act_1_.forward(x);
    m = conv_1_.forward(store, m);
    m = act_2_.forward(m);
    m = conv_2_.forward(store, m);
    m = act_3_.forward(m);
    m = conv_3_.forward(store, m);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += r.data[i];
    return m;
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    Matrix<Real> dm = conv_3_.backward(store, grad_out);
    dm = act_3_.backward(dm);
    dm = conv_2_.backward(store, dm);
    dm = act_2_.backward(dm);
    dm = conv_1_.backward(store, dm);
    Matrix<Real> dx = act_1_.backward(dm);
    const Matrix<Real> dr = conv_res_.backward(store, grad_out);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dr.data[i];
    return dx;
  }

 private:
  std::size_t factor_ = 1;
  Conv1d<Real> conv_res_, conv_1_, conv_2_, conv_3_;
  LeakyRelu<Real> act_1_, act_2_, act_3_;
};

}  // namespace diffsynth
