// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/rng.hpp"

namespace diffsynth {

/// Token-to-frame alignment: per-token durations (frames), per-token Gaussian
/// influence widths, and centers at cumulative duration minus half the own
/// duration. Centers are strictly increasing by construction.
template <typename Real>
struct Alignment {
  std::vector<Real> durations;
  std::vector<Real> ranges;
  std::vector<Real> centers;

  Alignment() = default;
  Alignment(std::vector<Real> durs, std::vector<Real> rngs)
      : durations(std::move(durs)), ranges(std::move(rngs)) {
    require(durations.size() == ranges.size(), "alignment: durations/ranges count mismatch");
    centers.resize(durations.size());
    Real cum = 0;
    for (std::size_t i = 0; i < durations.size(); ++i) {
      cum += durations[i];
      centers[i] = cum - durations[i] / Real(2);
    }
  }
};

/// Rounds half up; used to map summed (possibly fractional) durations to a
/// whole frame count. Exact for the integer durations of the synthetic corpus.
template <typename Real>
std::size_t total_frames_of(std::span<const Real> durations) {
  Real sum = 0;
  for (Real d : durations) sum += d;
  const auto frames = static_cast<long long>(std::floor(static_cast<double>(sum) + 0.5));
  require(frames >= 1, "alignment: total duration rounds to zero frames");
  return static_cast<std::size_t>(frames);
}

/// Gaussian-weight resampling of per-token hidden vectors to the frame rate.
/// Frame t is evaluated at continuous position t + 0.5; weights are the
/// normalized Gaussian densities exp(-(t + 0.5 - c_i)^2 / (2 sigma_i^2)).
template <typename Real>
Matrix<Real> gaussian_upsample(const Matrix<Real>& hiddens, const Alignment<Real>& alignment,
                               std::size_t total_frames) {
  const std::size_t n_tok = hiddens.rows;
  require(n_tok == alignment.durations.size(), "gaussian_upsample: hiddens/durations mismatch");
  for (Real r : alignment.ranges) require(r > Real(0), "gaussian_upsample: ranges must be positive");

  Matrix<Real> out(total_frames, hiddens.cols);
  std::vector<Real> w(n_tok);
  for (std::size_t t = 0; t < total_frames; ++t) {
    const Real pos = static_cast<Real>(t) + Real(0.5);
    Real z = 0;
    for (std::size_t i = 0; i < n_tok; ++i) {
      const Real d = pos - alignment.centers[i];
      w[i] = std::exp(-(d * d) / (Real(2) * alignment.ranges[i] * alignment.ranges[i]));
      z += w[i];
    }
    if (!(z > Real(0)))
      throw std::domain_error("gaussian_upsample: degenerate ranges, zero total weight at frame " +
                              std::to_string(t));
    Real* out_row = out.row(t);
    for (std::size_t i = 0; i < n_tok; ++i) {
      const Real wi = w[i] / z;
      const Real* h = hiddens.row(i);
      for (std::size_t c = 0; c < hiddens.cols; ++c) out_row[c] += wi * h[c];
    }
  }
  return out;
}

/// Gradients of gaussian_upsample. Given dL/d(output frames), accumulates
/// dL/d(hiddens), dL/d(durations) and dL/d(ranges). The duration gradient
/// flows through every center at or after the token (centers are cumulative
/// sums minus half the own duration).
template <typename Real>
void gaussian_upsample_backward(const Matrix<Real>& hiddens, const Alignment<Real>& alignment,
                                const Matrix<Real>& grad_out, Matrix<Real>& grad_hiddens,
                                std::span<Real> grad_durations, std::span<Real> grad_ranges) {
  const std::size_t n_tok = hiddens.rows;
  const std::size_t total_frames = grad_out.rows;
  require(grad_hiddens.rows == n_tok && grad_hiddens.cols == hiddens.cols,
          "gaussian_upsample_backward: grad_hiddens shape mismatch");
  require(grad_durations.size() == n_tok && grad_ranges.size() == n_tok,
          "gaussian_upsample_backward: gradient span size mismatch");

  std::vector<Real> g(n_tok), w(n_tok), grad_centers(n_tok, Real(0));
  for (std::size_t t = 0; t < total_frames; ++t) {
    const Real pos = static_cast<Real>(t) + Real(0.5);
    Real z = 0;
    for (std::size_t i = 0; i < n_tok; ++i) {
      const Real d = pos - alignment.centers[i];
      g[i] = std::exp(-(d * d) / (Real(2) * alignment.ranges[i] * alignment.ranges[i]));
      z += g[i];
    }
    const Real* go = grad_out.row(t);
    // dL/dw_i = <dL/dframe, hidden_i>; dL/dhidden_i += w_i * dL/dframe.
    Real dot_wg = 0;  // sum_j (dL/dw_j) w_j, for the softmax-style normalizer term
    for (std::size_t i = 0; i < n_tok; ++i) {
      w[i] = g[i] / z;
      const Real* h = hiddens.row(i);
      Real* gh = grad_hiddens.row(i);
      Real dw = 0;
      for (std::size_t c = 0; c < hiddens.cols; ++c) {
        dw += go[c] * h[c];
        gh[c] += w[i] * go[c];
      }
      g[i] = dw;  // reuse as dL/dw_i
      dot_wg += dw * w[i];
    }
    for (std::size_t i = 0; i < n_tok; ++i) {
      const Real dg = (g[i] - dot_wg) * w[i];  // dL/d(unnormalized g_i) * g_i folded in
      const Real d = pos - alignment.centers[i];
      const Real s2 = alignment.ranges[i] * alignment.ranges[i];
      grad_centers[i] += dg * d / s2;
      grad_ranges[i] += dg * d * d / (s2 * alignment.ranges[i]);
    }
  }
  // c_i = sum_{j<=i} d_j - d_i / 2  =>  dc_i/dd_j = 1 (j < i), 1/2 (j == i).
  Real suffix = 0;
  for (std::size_t j = n_tok; j-- > 0;) {
    grad_durations[j] += suffix + grad_centers[j] / Real(2);
    suffix += grad_centers[j];
  }
}

/// Mean squared error over per-token durations.
template <typename Real>
Real duration_loss(std::span<const Real> pred, std::span<const Real> truth) {
  require(!pred.empty(), "duration_loss: empty sequences");
  require(pred.size() == truth.size(), "duration_loss: count mismatch");
  Real acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Real d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<Real>(pred.size());
}

/// A training window: a frame span and the samples_per_frame ratio tying it
/// to the waveform.
struct WindowSpec {
  std::size_t start_frame = 0;
  std::size_t length_frames = 0;
  std::size_t samples_per_frame = 0;

  std::size_t start_sample() const { return start_frame * samples_per_frame; }
  std::size_t length_samples() const { return length_frames * samples_per_frame; }
};

template <typename Real>
struct Window {
  Matrix<Real> frames;
  std::vector<Real> waveform;
  WindowSpec spec;
};

/// Uniformly samples a training segment. A window longer than the utterance
/// falls back to the full utterance (short-clip policy).
template <typename Real>
Window<Real> sample_window(const Matrix<Real>& frames, std::span<const Real> waveform,
                           std::size_t window_frames, std::size_t samples_per_frame, Rng& rng) {
  require(waveform.size() == frames.rows * samples_per_frame,
          "sample_window: waveform length does not equal frames * samples_per_frame");
  const std::size_t total = frames.rows;
  const std::size_t len = window_frames >= total ? total : window_frames;
  const std::size_t start =
      len == total ? 0 : static_cast<std::size_t>(rng.uniform_int(total - len + 1));

  Window<Real> out;
  out.spec = WindowSpec{start, len, samples_per_frame};
  out.frames = Matrix<Real>(len, frames.cols);
  for (std::size_t t = 0; t < len; ++t)
    std::copy(frames.row(start + t), frames.row(start + t) + frames.cols, out.frames.row(t));
  const std::size_t s0 = out.spec.start_sample();
  out.waveform.assign(waveform.begin() + s0, waveform.begin() + s0 + out.spec.length_samples());
  return out;
}

}  // namespace diffsynth
