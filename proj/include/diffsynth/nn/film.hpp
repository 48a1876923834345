// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/nn/ops.hpp"
#include "diffsynth/nn/param_store.hpp"

namespace diffsynth {

/// Sinusoidal embedding of the noise level: position 5000 * sqrt_alpha_bar at
/// geometrically spaced frequencies from 1 down to 1e-4, sin/cos interleaved.
template <typename Real>
std::vector<Real> noise_embedding(Real sqrt_alpha_bar, std::size_t dim) {
  require(dim >= 2 && dim % 2 == 0, "noise_embedding: dim must be even and >= 2");
  const double pos = 5000.0 * static_cast<double>(sqrt_alpha_bar);
  const std::size_t half = dim / 2;
  std::vector<Real> e(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        half == 1 ? 1.0
                  : std::exp(-std::log(1e4) * static_cast<double>(k) /
                             static_cast<double>(half - 1));
    e[2 * k] = static_cast<Real>(std::sin(pos * freq));
    e[2 * k + 1] = static_cast<Real>(std::cos(pos * freq));
  }
  return e;
}

template <typename Real>
struct FilmSignal {
  Matrix<Real> scale;
  Matrix<Real> shift;
};

/// Produces per-channel, per-step scale and shift from a downsampling-branch
/// feature map combined with the noise-level embedding. Both branches must
/// sit at the same temporal resolution as the activation being modulated.
template <typename Real>
class FilmGenerator {
 public:
  FilmGenerator() = default;
  FilmGenerator(ParamStore<Real>& store, const std::string& name, std::size_t feat_ch,
                std::size_t out_ch, std::size_t noise_dim, Rng& init)
      : out_ch_(out_ch),
        conv_in_(store, name + ".conv_in", feat_ch, feat_ch, 3, init),
        noise_proj_(store, name + ".noise_proj", noise_dim, feat_ch, init),
        conv_out_(store, name + ".conv_out", feat_ch, 2 * out_ch, 3, init) {}

  FilmSignal<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& features,
                           const std::vector<Real>& noise_emb) {
    Matrix<Real> u = conv_in_.forward(store, features);
    u = act_.forward(u);
    Matrix<Real> emb_row(1, noise_emb.size());
    std::copy(noise_emb.begin(), noise_emb.end(), emb_row.row(0));
    const Matrix<Real> proj = noise_proj_.forward(store, emb_row);
    for (std::size_t t = 0; t < u.rows; ++t) {
      Real* row = u.row(t);
      for (std::size_t c = 0; c < u.cols; ++c) row[c] += proj.at(0, c);
    }
    const Matrix<Real> v = conv_out_.forward(store, u);
    FilmSignal<Real> s;
    s.scale = Matrix<Real>(v.rows, out_ch_);
    s.shift = Matrix<Real>(v.rows, out_ch_);
    for (std::size_t t = 0; t < v.rows; ++t)
      for (std::size_t c = 0; c < out_ch_; ++c) {
        s.scale.at(t, c) = v.at(t, c);
        s.shift.at(t, c) = v.at(t, c + out_ch_);
      }
    return s;
  }

  /// Returns the gradient with respect to the branch features.
  Matrix<Real> backward(ParamStore<Real>& store, const FilmSignal<Real>& grad) {
    Matrix<Real> gv(grad.scale.rows, 2 * out_ch_);
    for (std::size_t t = 0; t < gv.rows; ++t)
      for (std::size_t c = 0; c < out_ch_; ++c) {
        gv.at(t, c) = grad.scale.at(t, c);
        gv.at(t, c + out_ch_) = grad.shift.at(t, c);
      }
    Matrix<Real> gu = conv_out_.backward(store, gv);
    Matrix<Real> gproj(1, gu.cols);
    for (std::size_t t = 0; t < gu.rows; ++t) {
      const Real* row = gu.row(t);
      for (std::size_t c = 0; c < gu.cols; ++c) gproj.at(0, c) += row[c];
    }
    noise_proj_.backward(store, gproj);  // embedding itself has no trainable upstream
    gu = act_.backward(gu);
    return conv_in_.backward(store, gu);
  }

 private:
  std::size_t out_ch_ = 0;
  Conv1d<Real> conv_in_;
  Linear<Real> noise_proj_;
  Conv1d<Real> conv_out_;
  LeakyRelu<Real> act_;
};

/// Feature-wise linear modulation: scale (x) activation + shift.
template <typename Real>
Matrix<Real> film_modulate(const Matrix<Real>& activation, const FilmSignal<Real>& s) {
  require(activation.rows == s.scale.rows && activation.cols == s.scale.cols,
          "film_modulate: resolution mismatch between branches");
  Matrix<Real> out(activation.rows, activation.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = s.scale.data[i] * activation.data[i] + s.shift.data[i];
  return out;
}

template <typename Real>
void film_modulate_backward(const Matrix<Real>& activation, const FilmSignal<Real>& s,
                            const Matrix<Real>& grad_out, Matrix<Real>& grad_activation,
                            FilmSignal<Real>& grad_signal) {
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
    grad_activation.data[i] = grad_out.data[i] * s.scale.data[i];
    grad_signal.scale.data[i] += grad_out.data[i] * activation.data[i];
    grad_signal.shift.data[i] += grad_out.data[i];
  }
}

}  // namespace diffsynth
