// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "diffsynth/common.hpp"

namespace diffsynth {

struct MelConfig {
  std::size_t window = 160;    // analysis window length in samples
  std::size_t hop = 40;        // frame shift in samples
  std::size_t fft_size = 256;  // power of two, >= window
  std::size_t bins = 32;
  double fmin = 20.0;
  double fmax = 1900.0;
  double sample_rate = 4000.0;

  void validate() const {
    require_config(hop >= 1 && hop <= window, "mel.hop: must satisfy 1 <= hop <= window");
    require_config(window <= fft_size, "mel.window: must not exceed fft_size");
    require_config((fft_size & (fft_size - 1)) == 0 && fft_size >= 2,
                   "mel.fft_size: must be a power of two");
    require_config(bins >= 1, "mel.bins: must be positive");
    require_config(fmin >= 0.0 && fmin < fmax, "mel.fmin: must satisfy 0 <= fmin < fmax");
    require_config(fmax <= sample_rate / 2.0, "mel.fmax: must not exceed Nyquist");
  }
};

/// In-place iterative radix-2 FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular filter bank over the power spectrum, rows = mel bins, columns =
/// FFT bins 0..fft_size/2.
inline std::vector<std::vector<double>> mel_filter_bank(const MelConfig& cfg) {
  const std::size_t n_fft_bins = cfg.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.bins + 1));
  std::vector<std::vector<double>> bank(cfg.bins, std::vector<double>(n_fft_bins, 0.0));
  const double hz_per_bin = cfg.sample_rate / static_cast<double>(cfg.fft_size);
  for (std::size_t b = 0; b < cfg.bins; ++b) {
    const double lo = edges[b], center = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < n_fft_bins; ++k) {
      const double f = hz_per_bin * static_cast<double>(k);
      if (f <= lo || f >= hi) continue;
      bank[b][k] = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
    }
  }
  return bank;
}

/// Center frequency of mel band b under the bank above (test oracle hook).
inline double mel_band_center(const MelConfig& cfg, std::size_t band) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(band + 1) /
                                static_cast<double>(cfg.bins + 1));
}

/// Pre-compression mel energies: Hann-windowed power STFT through the
/// triangular bank. Frame count is floor((samples - window) / hop) + 1.
template <typename Real>
Matrix<double> mel_power_spectrogram(std::span<const Real> waveform, const MelConfig& cfg) {
  cfg.validate();
  require(waveform.size() >= cfg.window, "mel_spectrogram: waveform shorter than one window");
  const std::size_t frames = (waveform.size() - cfg.window) / cfg.hop + 1;
  const auto bank = mel_filter_bank(cfg);

  std::vector<double> hann(cfg.window);
  for (std::size_t i = 0; i < cfg.window; ++i)
    hann[i] = 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                                    static_cast<double>(cfg.window)));

  Matrix<double> out(frames, cfg.bins);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  const std::size_t n_fft_bins = cfg.fft_size / 2 + 1;
  std::vector<double> power(n_fft_bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t i = 0; i < cfg.window; ++i)
      buf[i] = static_cast<double>(waveform[t * cfg.hop + i]) * hann[i];
    fft_radix2(buf);
    for (std::size_t k = 0; k < n_fft_bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t b = 0; b < cfg.bins; ++b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n_fft_bins; ++k) acc += bank[b][k] * power[k];
      out.at(t, b) = acc;
    }
  }
  return out;
}

constexpr double kLogMelFloor = 1e-5;

/// Log-compressed mel spectrogram with floor 1e-5.
template <typename Real>
Matrix<double> mel_spectrogram(std::span<const Real> waveform, const MelConfig& cfg) {
  Matrix<double> m = mel_power_spectrogram(waveform, cfg);
  for (auto& v : m.data) v = std::log(std::max(v, kLogMelFloor));
  return m;
}

/// Root-mean-square distance between two log-mel matrices, truncated to the
/// shorter frame count. The objective proxy metric for synthesis quality.
inline double log_mel_distance(const Matrix<double>& a, const Matrix<double>& b) {
  require(a.cols == b.cols, "log_mel_distance: bin count mismatch");
  const std::size_t rows = std::min(a.rows, b.rows);
  require(rows > 0, "log_mel_distance: empty spectrograms");
  double acc = 0.0;
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double d = a.at(t, c) - b.at(t, c);
      acc += d * d;
    }
  return std::sqrt(acc / static_cast<double>(rows * a.cols));
}

}  // namespace diffsynth
