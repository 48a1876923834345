// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/rng.hpp"
#include "diffsynth/schedule.hpp"

namespace diffsynth {

/// Forward noising: sqrt(ab) * y0 + sqrt(1 - ab) * eps, elementwise.
template <typename Real>
std::vector<Real> forward_diffuse(std::span<const Real> y0, Real sqrt_alpha_bar,
                                  std::span<const Real> epsilon) {
  require(y0.size() == epsilon.size(), "forward_diffuse: length mismatch");
  require(sqrt_alpha_bar >= Real(0) && sqrt_alpha_bar <= Real(1),
          "forward_diffuse: sqrt_alpha_bar outside [0, 1]");
  const Real noise_scale = std::sqrt(Real(1) - sqrt_alpha_bar * sqrt_alpha_bar);
  std::vector<Real> out(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i)
    out[i] = sqrt_alpha_bar * y0[i] + noise_scale * epsilon[i];
  return out;
}

/// Training objective: mean absolute difference between predicted and true noise.
template <typename Real>
Real epsilon_loss(std::span<const Real> eps_pred, std::span<const Real> eps_true) {
  require(!eps_pred.empty(), "epsilon_loss: empty inputs");
  require(eps_pred.size() == eps_true.size(), "epsilon_loss: length mismatch");
  Real acc = 0;
  for (std::size_t i = 0; i < eps_pred.size(); ++i)
    acc += std::abs(eps_pred[i] - eps_true[i]);
  return acc / static_cast<Real>(eps_pred.size());
}

/// Posterior standard deviation of one reverse step. Zero at n = 1 because
/// alpha_bar(0) == 1.
inline double posterior_sigma(const NoiseSchedule& s, std::size_t n) {
  return std::sqrt((1.0 - s.alpha_bar(n - 1)) / (1.0 - s.alpha_bar(n)) * s.beta(n));
}

/// One reverse-process update from y_n to y_{n-1} given the predicted noise.
/// z is caller-supplied standard Gaussian noise (ignored when n == 1 since
/// sigma_1 == 0).
template <typename Real>
std::vector<Real> ancestral_step(std::span<const Real> y_n, std::span<const Real> eps_pred,
                                 std::size_t n, const NoiseSchedule& schedule,
                                 std::span<const Real> z) {
  require(n >= 1 && n <= schedule.size(), "ancestral_step: step index out of range");
  require(y_n.size() == eps_pred.size() && y_n.size() == z.size(),
          "ancestral_step: length mismatch");
  const double beta = schedule.beta(n);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(n));
  const double eps_coef = beta / std::sqrt(1.0 - schedule.alpha_bar(n));
  const double sigma = posterior_sigma(schedule, n);
  std::vector<Real> out(y_n.size());
  for (std::size_t i = 0; i < y_n.size(); ++i) {
    const double mean = inv_sqrt_alpha * (static_cast<double>(y_n[i]) -
                                          eps_coef * static_cast<double>(eps_pred[i]));
    out[i] = static_cast<Real>(mean + sigma * static_cast<double>(z[i]));
  }
  return out;
}

/// Score-driven Langevin update: y + (eta / 2) * score + sqrt(eta) * z.
/// Standalone utility for validating the score interpretation; the synthesis
/// path uses ancestral_step.
template <typename Real>
std::vector<Real> langevin_step(std::span<const Real> y, std::span<const Real> score, Real eta,
                                std::span<const Real> z) {
  require(eta > Real(0), "langevin_step: eta must be positive");
  require(y.size() == score.size() && y.size() == z.size(), "langevin_step: length mismatch");
  const Real drift = eta / Real(2);
  const Real diffuse = std::sqrt(eta);
  std::vector<Real> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + drift * score[i] + diffuse * z[i];
  return out;
}

/// Full reverse-process synthesis. The predictor maps (y, x, sqrt_alpha_bar)
/// to a noise estimate at waveform length; x's frame count times
/// samples_per_frame defines the output length. Deterministic given the rng.
template <typename Real, typename EpsFn>
std::vector<Real> sample(EpsFn&& eps_fn, const Matrix<Real>& x, std::size_t samples_per_frame,
                         const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t len = x.rows * samples_per_frame;
  std::vector<Real> y(len);
  rng.fill_normal<Real>(y);
  std::vector<Real> z(len, Real(0));
  for (std::size_t n = schedule.size(); n >= 1; --n) {
    const std::vector<Real> eps_pred =
        eps_fn(std::span<const Real>(y), x, static_cast<Real>(schedule.sqrt_alpha_bars[n - 1]));
    if (n > 1)
      rng.fill_normal<Real>(z);
    else
      std::fill(z.begin(), z.end(), Real(0));
    y = ancestral_step<Real>(y, eps_pred, n, schedule, z);
  }
  return y;
}

}  // namespace diffsynth
