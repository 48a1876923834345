// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient verification shared by the unit tests and the
// acceptance suite. The oracle is a central difference in double precision;
// it stays independent of the backward implementations it checks.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "diffsynth/nn/param_store.hpp"

namespace diffsynth::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_entry;
  std::size_t checks = 0;
};

/// Compares analytic gradients against central finite differences.
///
/// `loss` must be a deterministic function of the store's values (re-seed any
/// rng inside). `forward_backward` must populate the gradients for the same
/// loss. The store is fully restored (including non-trainable buffers such as
/// running statistics) around every evaluation.
inline GradCheckResult gradcheck(ParamStore<double>& store,
                                 const std::function<double()>& loss,
                                 const std::function<void()>& forward_backward,
                                 double h = 1e-3, std::size_t stride = 1) {
  std::vector<std::vector<double>> snapshot;
  for (const auto& e : store) snapshot.push_back(e.value);

  const auto restore = [&] {
    std::size_t i = 0;
    for (auto& e : store) e.value = snapshot[i++];
  };

  restore();
  store.zero_grads();
  forward_backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& e : store) analytic.push_back(e.grad);
  restore();

  GradCheckResult result;
  std::size_t entry_idx = 0;
  for (auto& e : store) {
    if (!e.trainable) {
      ++entry_idx;
      continue;
    }
    for (std::size_t i = 0; i < e.value.size(); i += stride) {
      restore();
      e.value[i] = snapshot[entry_idx][i] + h;
      const double lp = loss();
      restore();
      e.value[i] = snapshot[entry_idx][i] - h;
      const double lm = loss();
      restore();
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[entry_idx][i];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_entry = e.name + "[" + std::to_string(i) + "]";
      }
      ++result.checks;
    }
    ++entry_idx;
  }
  restore();
  return result;
}

}  // namespace diffsynth::testing
