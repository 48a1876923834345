// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/mel.hpp"
#include "diffsynth/rng.hpp"

namespace diffsynth {

/// Synthetic corpus settings. Content token k renders as a harmonic tone at
/// f0 * 2^(k/12); durations are drawn uniformly from a per-token integer
/// range centered on a token-specific base so they are learnable.
struct CorpusConfig {
  std::size_t content_tokens = 12;  // K; silence = K, end-of-sequence = K + 1
  std::size_t dur_min = 3;
  std::size_t dur_max = 10;
  std::size_t dur_jitter = 1;
  std::size_t tokens_min = 6;   // content tokens per utterance
  std::size_t tokens_max = 10;
  std::size_t word_len = 3;     // silence token inserted after every word_len content tokens
  double sample_rate = 4000.0;
  std::size_t samples_per_frame = 40;
  double f0 = 220.0;
  std::size_t train_utterances = 500;
  std::size_t holdout_utterances = 50;

  std::size_t silence_id() const { return content_tokens; }
  std::size_t eos_id() const { return content_tokens + 1; }
  std::size_t vocab_size() const { return content_tokens + 2; }

  void validate() const {
    require_config(content_tokens >= 1, "data.content_tokens: must be positive");
    require_config(dur_min >= 1 && dur_min <= dur_max, "data.dur_min: need 1 <= dur_min <= dur_max");
    require_config(2 * dur_jitter <= dur_max - dur_min,
                   "data.dur_jitter: jitter window must fit inside [dur_min, dur_max]");
    require_config(tokens_min >= 1 && tokens_min <= tokens_max,
                   "data.tokens_min: need 1 <= tokens_min <= tokens_max");
    require_config(word_len >= 1, "data.word_len: must be positive");
    require_config(sample_rate > 0.0, "data.sample_rate: must be positive");
    require_config(samples_per_frame >= 1, "data.samples_per_frame: must be positive");
    require_config(f0 > 0.0 && f0 * 2.0 < sample_rate / 2.0,
                   "data.f0: fundamental must sit well below Nyquist");
  }

  /// Deterministic duration base for a token: content tokens spread linearly
  /// across the configured range, boundary tokens sit at the short end.
  std::size_t duration_base(std::size_t token) const {
    const std::size_t lo = dur_min + dur_jitter;
    const std::size_t hi = dur_max - dur_jitter;
    if (token >= content_tokens) return lo;
    if (content_tokens == 1) return (lo + hi) / 2;
    return lo + (hi - lo) * token / (content_tokens - 1);
  }

  double token_freq(std::size_t token) const {
    return f0 * std::pow(2.0, static_cast<double>(token) / 12.0);
  }
};

struct Utterance {
  std::vector<int> tokens;
  std::vector<int> durations;   // exact ground truth, integer frames
  std::vector<float> samples;   // [-1, 1]
  double sample_rate = 0.0;
  std::size_t samples_per_frame = 0;

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (int d : durations) n += static_cast<std::size_t>(d);
    return n;
  }
  std::vector<float> durations_real() const {
    return std::vector<float>(durations.begin(), durations.end());
  }
};

/// Draws a token sequence: random content tokens, silence at word boundaries,
/// end-of-sequence terminator.
inline std::vector<int> gen_token_sequence(Rng& rng, const CorpusConfig& cfg) {
  const std::size_t n_content =
      cfg.tokens_min + static_cast<std::size_t>(rng.uniform_int(cfg.tokens_max - cfg.tokens_min + 1));
  std::vector<int> tokens;
  for (std::size_t i = 0; i < n_content; ++i) {
    tokens.push_back(static_cast<int>(rng.uniform_int(cfg.content_tokens)));
    if ((i + 1) % cfg.word_len == 0 && i + 1 < n_content)
      tokens.push_back(static_cast<int>(cfg.silence_id()));
  }
  tokens.push_back(static_cast<int>(cfg.eos_id()));
  return tokens;
}

/// Renders one utterance: harmonic tones with a smooth amplitude envelope and
/// continuous phase across token boundaries, silence as zeros. Durations are
/// recorded exactly; the waveform length is samples_per_frame * sum(durations).
inline Utterance gen_utterance(const std::vector<int>& token_seq, Rng& rng,
                               const CorpusConfig& cfg) {
  cfg.validate();
  Utterance utt;
  utt.tokens = token_seq;
  utt.sample_rate = cfg.sample_rate;
  utt.samples_per_frame = cfg.samples_per_frame;

  utt.durations.reserve(token_seq.size());
  for (int tok : token_seq) {
    require(tok >= 0 && static_cast<std::size_t>(tok) < cfg.vocab_size(),
            "gen_utterance: token id outside vocabulary: " + std::to_string(tok));
    const std::size_t base = cfg.duration_base(static_cast<std::size_t>(tok));
    const std::size_t d =
        base - cfg.dur_jitter + static_cast<std::size_t>(rng.uniform_int(2 * cfg.dur_jitter + 1));
    utt.durations.push_back(static_cast<int>(d));
  }

  const double amp_total = rng.uniform(0.5, 0.75);
  // Relative harmonic weights; normalized so peak amplitude stays below 1.
  const double harmonics[3] = {1.0, 0.35, 0.2};
  const double norm = amp_total / (harmonics[0] + harmonics[1] + harmonics[2]);

  std::size_t total_samples = 0;
  for (int d : utt.durations) total_samples += static_cast<std::size_t>(d) * cfg.samples_per_frame;
  utt.samples.assign(total_samples, 0.0f);

  const double two_pi = 2.0 * 3.14159265358979323846;
  double phase = 0.0;
  std::size_t pos = 0;
  for (std::size_t ti = 0; ti < token_seq.size(); ++ti) {
    const std::size_t seg = static_cast<std::size_t>(utt.durations[ti]) * cfg.samples_per_frame;
    const int tok = token_seq[ti];
    if (static_cast<std::size_t>(tok) >= cfg.content_tokens) {
      pos += seg;  // silence and eos render as zeros; phase holds
      continue;
    }
    const double freq = cfg.token_freq(static_cast<std::size_t>(tok));
    const double dphi = two_pi * freq / cfg.sample_rate;
    const double attack = std::min(static_cast<double>(seg) / 4.0, 0.005 * cfg.sample_rate);
    for (std::size_t i = 0; i < seg; ++i) {
      phase += dphi;
      const double edge = std::min(static_cast<double>(i),
                                   static_cast<double>(seg - 1 - i));
      const double env = attack > 0.0 ? std::min(1.0, edge / attack) : 1.0;
      double v = 0.0;
      for (int h = 0; h < 3; ++h) {
        const double hf = freq * (h + 1);
        if (hf >= 0.5 * cfg.sample_rate) break;
        v += harmonics[h] * std::sin((h + 1) * phase);
      }
      utt.samples[pos + i] = static_cast<float>(norm * env * v);
    }
    pos += seg;
  }
  return utt;
}

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> holdout;
  CorpusConfig config;
  std::uint64_t seed = 0;
};

/// Deterministic corpus generation with per-utterance derived seeds.
inline Corpus gen_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  corpus.seed = seed;
  const std::size_t total = cfg.train_utterances + cfg.holdout_utterances;
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(derive_seed(seed, 0x7574ull, i));
    const std::vector<int> tokens = gen_token_sequence(rng, cfg);
    Utterance utt = gen_utterance(tokens, rng, cfg);
    if (i < cfg.train_utterances)
      corpus.train.push_back(std::move(utt));
    else
      corpus.holdout.push_back(std::move(utt));
  }
  return corpus;
}

}  // namespace diffsynth
