// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/rng.hpp"

namespace diffsynth {

/// Noise schedule for the forward/reverse diffusion process: the per-step
/// beta sequence and its derived cumulative products. Immutable after
/// construction; safe for unsynchronized shared reads.
struct NoiseSchedule {
  std::vector<double> betas;            // beta_n, n = 1..N at index n-1
  std::vector<double> alphas;           // 1 - beta_n
  std::vector<double> alpha_bars;       // running product of alphas
  std::vector<double> sqrt_alpha_bars;  // sqrt(alpha_bars)

  std::size_t size() const { return betas.size(); }

  /// alpha_bar with the empty-product convention: alpha_bar(0) == 1.
  double alpha_bar(std::size_t n) const { return n == 0 ? 1.0 : alpha_bars[n - 1]; }
  double beta(std::size_t n) const { return betas[n - 1]; }
  double alpha(std::size_t n) const { return alphas[n - 1]; }
};

/// Builds a schedule of `n` evenly spaced betas from beta_start to beta_end
/// inclusive and its cumulative products.
inline NoiseSchedule make_linear_schedule(double beta_start, double beta_end, std::size_t n) {
  require_config(n >= 1, "schedule.N: must be >= 1");
  require_config(beta_start > 0.0 && beta_start < 1.0,
                 "schedule.beta_start: must lie in (0, 1)");
  require_config(beta_end > 0.0 && beta_end < 1.0, "schedule.beta_end: must lie in (0, 1)");
  require_config(beta_start <= beta_end, "schedule: beta_start must not exceed beta_end");

  NoiseSchedule s;
  s.betas.resize(n);
  s.alphas.resize(n);
  s.alpha_bars.resize(n);
  s.sqrt_alpha_bars.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b =
        n == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                  static_cast<double>(n - 1);
    s.betas[i] = b;
    s.alphas[i] = 1.0 - b;
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
    s.sqrt_alpha_bars[i] = std::sqrt(prod);
  }
  return s;
}

/// Draws a training noise level: step index n uniform over {1..N}, then a
/// uniform alpha_bar inside [alpha_bar(n), alpha_bar(n-1)]. Returns the
/// square root, the conditioning input of the score network.
inline double sample_noise_level(const NoiseSchedule& schedule, Rng& rng) {
  require(schedule.size() >= 1, "sample_noise_level: empty schedule");
  const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(schedule.size()));
  const double lo = schedule.alpha_bar(n);
  const double hi = schedule.alpha_bar(n - 1);
  return std::sqrt(rng.uniform(lo, hi));
}

/// Derives a reduced-step inference schedule from a training schedule. The
/// result is a fresh linear beta schedule whose terminal noise level matches
/// the training schedule's: sqrt(alpha_bar_steps) within 1% (bisection on the
/// end beta). steps == N returns the training schedule unchanged.
inline NoiseSchedule inference_schedule(const NoiseSchedule& train, std::size_t steps) {
  require_config(steps >= 1, "inference steps: must be >= 1");
  require_config(steps <= train.size(), "inference steps: must not exceed training N");
  if (steps == train.size()) return train;

  const double target = train.alpha_bars.back();
  if (steps == 1) {
    return make_linear_schedule(1.0 - target, 1.0 - target, 1);
  }

  // Start beta scaled by the step-count ratio, clamped so the constant
  // schedule at beta_lo still overshoots the target product.
  const double beta_const = 1.0 - std::pow(target, 1.0 / static_cast<double>(steps));
  double beta_lo = std::min(train.betas.front() * static_cast<double>(train.size()) /
                                static_cast<double>(steps),
                            0.5 * beta_const);

  const auto terminal = [&](double beta_hi) {
    return make_linear_schedule(beta_lo, beta_hi, steps).alpha_bars.back();
  };

  double lo = beta_lo, hi = 1.0 - 1e-12;
  // terminal() decreases in beta_hi; bracket: terminal(lo) >= target >= terminal(hi).
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (terminal(mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return make_linear_schedule(beta_lo, 0.5 * (lo + hi), steps);
}

}  // namespace diffsynth
