// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diffsynth/align.hpp"
#include "diffsynth/rng.hpp"
#include "gradcheck.hpp"

using namespace diffsynth;

TEST_CASE("gaussian upsample: single token broadcasts its hidden vector") {
  Matrix<double> h(1, 3);
  h.at(0, 0) = 0.3;
  h.at(0, 1) = -1.2;
  h.at(0, 2) = 2.0;
  const Alignment<double> a({5.0}, {1.7});
  const auto out = gaussian_upsample(h, a, 5);
  REQUIRE(out.rows == 5);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      REQUIRE(out.at(t, c) == Catch::Approx(h.at(0, c)).margin(1e-12));
}

TEST_CASE("gaussian upsample: identical hiddens collapse to that vector") {
  Matrix<double> h(2, 2);
  h.at(0, 0) = h.at(1, 0) = 0.75;
  h.at(0, 1) = h.at(1, 1) = -0.25;
  const Alignment<double> a({3.0, 4.0}, {0.8, 1.3});
  const auto out = gaussian_upsample(h, a, 7);
  for (std::size_t t = 0; t < 7; ++t) {
    REQUIRE(out.at(t, 0) == Catch::Approx(0.75).margin(1e-9));
    REQUIRE(out.at(t, 1) == Catch::Approx(-0.25).margin(1e-9));
  }
}

TEST_CASE("gaussian upsample: equal-sigma midpoint weights are (0.5, 0.5)") {
  // Durations (2, 4): centers 1 and 4, midpoint 2.5 = frame 2's position.
  Matrix<double> h(2, 2);
  h.at(0, 0) = 1.0;
  h.at(1, 1) = 1.0;
  const Alignment<double> a({2.0, 4.0}, {1.0, 1.0});
  const auto out = gaussian_upsample(h, a, 6);
  REQUIRE(out.at(2, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(out.at(2, 1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("gaussian upsample: symmetric duration pair mirrors weights") {
  Matrix<double> h(2, 2);
  h.at(0, 0) = 1.0;
  h.at(1, 1) = 1.0;
  const Alignment<double> a({4.0, 4.0}, {1.1, 1.1});
  const auto out = gaussian_upsample(h, a, 8);
  // Centers 2 and 6; frames 3 and 4 sit symmetric about the midpoint 4.
  REQUIRE(out.at(3, 0) == Catch::Approx(out.at(4, 1)).margin(1e-12));
  REQUIRE(out.at(3, 1) == Catch::Approx(out.at(4, 0)).margin(1e-12));
}

TEST_CASE("gaussian upsample: weight rows sum to one") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n_tok = 1 + rng.uniform_int(6);
    std::vector<double> durs(n_tok), ranges(n_tok);
    for (auto& d : durs) d = 1.0 + rng.uniform(0.0, 6.0);
    for (auto& r : ranges) r = 0.1 + rng.uniform(0.0, 3.0);
    Matrix<double> ones(n_tok, 1);
    ones.fill(1.0);
    const Alignment<double> a(durs, ranges);
    const std::size_t total = total_frames_of<double>(durs);
    const auto out = gaussian_upsample(ones, a, total);
    for (std::size_t t = 0; t < total; ++t)
      REQUIRE(out.at(t, 0) == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("gaussian upsample: translation covariance under center shifts") {
  Rng rng(12);
  Matrix<double> h(3, 2);
  rng.fill_uniform<double>(h.data, -1.0, 1.0);
  Alignment<double> base({3.0, 2.0, 4.0}, {0.7, 1.2, 0.9});
  const auto out = gaussian_upsample(h, base, 9);
  const std::size_t k = 5;
  Alignment<double> shifted = base;
  for (auto& c : shifted.centers) c += static_cast<double>(k);
  const auto out_shifted = gaussian_upsample(h, shifted, 9 + k);
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t c = 0; c < 2; ++c)
      REQUIRE(out_shifted.at(t + k, c) == Catch::Approx(out.at(t, c)).margin(1e-9));
}

TEST_CASE("gaussian upsample: degenerate ranges raise a domain error") {
  Matrix<double> h(1, 1);
  h.at(0, 0) = 1.0;
  Alignment<double> a({1.0}, {0.01});
  a.centers[0] = 5e5;  // all frames infinitely far in weight space
  REQUIRE_THROWS_AS(gaussian_upsample(h, a, 3), std::domain_error);
  const Alignment<double> bad({2.0}, {0.0});
  REQUIRE_THROWS_AS(gaussian_upsample(h, bad, 2), std::invalid_argument);
}

TEST_CASE("gaussian upsample: gradients match finite differences") {
  // Hiddens, durations and ranges all live in a store so the shared harness
  // can perturb them uniformly.
  ParamStore<double> store;
  Rng rng(13);
  const std::size_t n_tok = 3, dim = 2, total = 7;
  const auto h_h = store.add_uniform("test.hiddens", {n_tok, dim}, rng, 1.0);
  const auto h_d = store.add("test.durations", {n_tok});
  const auto h_r = store.add("test.ranges", {n_tok});
  store.value(h_d)[0] = 2.2;
  store.value(h_d)[1] = 1.8;
  store.value(h_d)[2] = 3.1;
  store.value(h_r)[0] = 0.8;
  store.value(h_r)[1] = 1.4;
  store.value(h_r)[2] = 0.6;
  Matrix<double> proj(total, dim);
  rng.fill_uniform<double>(proj.data, -1.0, 1.0);

  const auto make_inputs = [&](Matrix<double>& h, Alignment<double>& a) {
    h = Matrix<double>(n_tok, dim);
    std::copy(store.value(h_h).begin(), store.value(h_h).end(), h.data.begin());
    std::vector<double> d(store.value(h_d).begin(), store.value(h_d).end());
    std::vector<double> r(store.value(h_r).begin(), store.value(h_r).end());
    a = Alignment<double>(d, r);
  };
  const auto loss = [&] {
    Matrix<double> h;
    Alignment<double> a;
    make_inputs(h, a);
    const auto out = gaussian_upsample(h, a, total);
    double l = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) l += out.data[i] * proj.data[i];
    return l;
  };
  const auto forward_backward = [&] {
    Matrix<double> h;
    Alignment<double> a;
    make_inputs(h, a);
    gaussian_upsample(h, a, total);
    Matrix<double> gh(n_tok, dim);
    gaussian_upsample_backward(h, a, proj, gh, store.grad(h_d), store.grad(h_r));
    std::copy(gh.data.begin(), gh.data.end(), store.grad(h_h).begin());
  };
  const auto res = testing::gradcheck(store, loss, forward_backward);
  INFO(res.worst_entry);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("duration loss: trivial values and brute-force oracle") {
  const std::vector<double> t{3, 5, 7};
  REQUIRE(duration_loss<double>(t, t) == 0.0);
  const std::vector<double> p{5, 7, 9};
  REQUIRE(duration_loss<double>(p, t) == Catch::Approx(4.0).margin(1e-15));

  Rng rng(14);
  std::vector<double> a(5), b(5);
  rng.fill_uniform<double>(a, 1.0, 9.0);
  rng.fill_uniform<double>(b, 1.0, 9.0);
  double brute = 0.0;
  for (std::size_t i = 0; i < 5; ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
  REQUIRE(duration_loss<double>(a, b) == Catch::Approx(brute / 5.0).margin(1e-15));

  const std::vector<double> empty;
  REQUIRE_THROWS_AS(duration_loss<double>(empty, empty), std::invalid_argument);
}

TEST_CASE("sample window: identity when the window covers the utterance") {
  Matrix<double> frames(10, 2);
  Rng rng(15);
  rng.fill_uniform<double>(frames.data, -1.0, 1.0);
  std::vector<double> wave(10 * 300);
  rng.fill_uniform<double>(wave, -1.0, 1.0);
  const auto w = sample_window<double>(frames, wave, 10, 300, rng);
  REQUIRE(w.spec.start_frame == 0);
  REQUIRE(w.spec.length_frames == 10);
  REQUIRE(w.frames.data == frames.data);
  REQUIRE(w.waveform == wave);
}

TEST_CASE("sample window: slice arithmetic at rate 300") {
  Matrix<double> frames(10, 1);
  std::vector<double> wave(3000);
  for (std::size_t i = 0; i < wave.size(); ++i) wave[i] = static_cast<double>(i);
  Rng rng(16);
  const auto w = sample_window<double>(frames, wave, 4, 300, rng);
  REQUIRE(w.spec.length_frames == 4);
  REQUIRE(w.waveform.size() == 1200);
  REQUIRE(w.waveform[0] == static_cast<double>(300 * w.spec.start_frame));
}

TEST_CASE("sample window: short clips fall back to the full utterance") {
  Matrix<double> frames(5, 1);
  std::vector<double> wave(5 * 40, 0.5);
  Rng rng(17);
  const auto w = sample_window<double>(frames, wave, 64, 40, rng);
  REQUIRE(w.spec.start_frame == 0);
  REQUIRE(w.spec.length_frames == 5);
}

TEST_CASE("sample window: start positions uniform within 3-sigma") {
  Matrix<double> frames(100, 1);
  std::vector<double> wave(100 * 4, 0.0);
  Rng rng(2031);
  const int draws = 10000;
  std::vector<int> counts(37, 0);
  for (int i = 0; i < draws; ++i) {
    const auto w = sample_window<double>(frames, wave, 64, 4, rng);
    REQUIRE(w.spec.start_frame <= 36);
    ++counts[w.spec.start_frame];
  }
  const double p = 1.0 / 37.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : counts) REQUIRE(std::abs(c - draws * p) < 3.0 * sigma);
}

TEST_CASE("sample window: exact ratio across randomized cases") {
  Rng rng(18);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t total = 1 + rng.uniform_int(120);
    const std::size_t spf = 1 + rng.uniform_int(64);
    const std::size_t window = 1 + rng.uniform_int(140);
    Matrix<double> frames(total, 1);
    std::vector<double> wave(total * spf, 0.0);
    const auto w = sample_window<double>(frames, wave, window, spf, rng);
    REQUIRE(w.waveform.size() == w.spec.length_frames * spf);
    REQUIRE(w.spec.start_frame + w.spec.length_frames <= total);
    REQUIRE(w.spec.start_sample() == w.spec.start_frame * spf);
  }
}

TEST_CASE("total frames: round half up on summed durations") {
  REQUIRE(total_frames_of<double>(std::vector<double>{1.2, 2.3}) == 4);  // 3.5 rounds up
  REQUIRE(total_frames_of<double>(std::vector<double>{1.2, 2.2}) == 3);
  REQUIRE_THROWS_AS(total_frames_of<double>(std::vector<double>{0.1}), std::invalid_argument);
}
