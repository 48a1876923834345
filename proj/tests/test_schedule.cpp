// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "diffsynth/rng.hpp"
#include "diffsynth/schedule.hpp"

using namespace diffsynth;

TEST_CASE("constant schedule: direct products") {
  const auto s = make_linear_schedule(0.1, 0.1, 3);
  REQUIRE(s.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(s.betas[i] == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(s.alpha_bars[0] == Catch::Approx(0.9).margin(1e-15));
  REQUIRE(s.alpha_bars[1] == Catch::Approx(0.81).margin(1e-15));
  REQUIRE(s.alpha_bars[2] == Catch::Approx(0.729).margin(1e-15));
}

TEST_CASE("three-step ramp: evenly spaced betas") {
  const auto s = make_linear_schedule(0.1, 0.3, 3);
  REQUIRE(s.betas[0] == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(s.betas[1] == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(s.betas[2] == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(s.alpha_bars[2] == Catch::Approx(0.9 * 0.8 * 0.7).margin(1e-15));
}

TEST_CASE("long default schedule: monotone, regression-pinned terminal product") {
  const auto s = make_linear_schedule(1e-4, 5e-3, 1000);
  for (std::size_t n = 1; n < s.size(); ++n) REQUIRE(s.alpha_bars[n] < s.alpha_bars[n - 1]);
  REQUIRE(s.alpha_bars.back() < 0.1);
  // Frozen once from an independent computation of the cumulative product.
  REQUIRE(s.alpha_bars.back() == Catch::Approx(0.07774940808486067).margin(5e-12));
}

TEST_CASE("schedule invariants: sqrt consistency and brute-force reconstruction") {
  const auto s = make_linear_schedule(2e-4, 3e-2, 777);
  long double prod = 1.0L;
  for (std::size_t i = 0; i < s.size(); ++i) {
    prod *= static_cast<long double>(1.0 - s.betas[i]);
    REQUIRE(std::abs(s.sqrt_alpha_bars[i] * s.sqrt_alpha_bars[i] - s.alpha_bars[i]) < 1e-12);
    REQUIRE(std::abs(static_cast<double>(prod) - s.alpha_bars[i]) < 1e-12);
  }
}

TEST_CASE("schedule rejects invalid configuration") {
  REQUIRE_THROWS_AS(make_linear_schedule(0.0, 0.1, 10), ConfigError);
  REQUIRE_THROWS_AS(make_linear_schedule(0.1, 1.0, 10), ConfigError);
  REQUIRE_THROWS_AS(make_linear_schedule(0.3, 0.1, 10), ConfigError);
  REQUIRE_THROWS_AS(make_linear_schedule(0.1, 0.2, 0), ConfigError);
}

TEST_CASE("noise level sampling: single-step bounds forced by alpha_bar_0 = 1") {
  const auto s = make_linear_schedule(0.1, 0.1, 1);
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double v = sample_noise_level(s, rng);
    REQUIRE(v >= std::sqrt(0.9));
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("noise level sampling: global bounds over any schedule") {
  const auto s = make_linear_schedule(1e-3, 0.05, 100);
  Rng rng(7);
  const double lo = std::sqrt(s.alpha_bars.back());
  for (int i = 0; i < 100000; ++i) {
    const double v = sample_noise_level(s, rng);
    REQUIRE(v >= lo);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("noise level sampling: interval choice uniform within 3-sigma") {
  const auto s = make_linear_schedule(0.1, 0.1, 3);
  Rng rng(2024);
  const int draws = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < draws; ++i) {
    const double u = sample_noise_level(s, rng);
    const double ab = u * u;
    // Intervals: [0.729, 0.81], [0.81, 0.9], [0.9, 1].
    if (ab < 0.81)
      ++counts[2];
    else if (ab < 0.9)
      ++counts[1];
    else
      ++counts[0];
  }
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(p * (1 - p) * draws);
  for (int k = 0; k < 3; ++k)
    REQUIRE(std::abs(counts[k] - p * draws) < 3.0 * sigma);
}

TEST_CASE("inference schedule: identity at full step count") {
  const auto train = make_linear_schedule(1e-3, 0.05, 100);
  const auto inf = inference_schedule(train, 100);
  REQUIRE(inf.betas == train.betas);
}

TEST_CASE("inference schedule: single step solves 1 - beta = alpha_bar_N") {
  const auto train = make_linear_schedule(1e-3, 0.05, 100);
  const auto inf = inference_schedule(train, 1);
  REQUIRE(inf.size() == 1);
  REQUIRE(inf.alpha_bars[0] ==
          Catch::Approx(train.alpha_bars.back()).epsilon(0.01));
}

TEST_CASE("inference schedule: endpoint matching at 50 steps from 1000") {
  const auto train = make_linear_schedule(1e-4, 5e-3, 1000);
  const auto inf = inference_schedule(train, 50);
  REQUIRE(inf.size() == 50);
  const double target = std::sqrt(train.alpha_bars.back());
  const double have = std::sqrt(inf.alpha_bars.back());
  REQUIRE(std::abs(have - target) / target < 0.01);
}

TEST_CASE("inference schedule: rejects invalid step counts") {
  const auto train = make_linear_schedule(1e-3, 0.05, 100);
  REQUIRE_THROWS_AS(inference_schedule(train, 0), ConfigError);
  REQUIRE_THROWS_AS(inference_schedule(train, 101), ConfigError);
}
