// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsynth/common.hpp"
#include "diffsynth/data.hpp"
#include "diffsynth/mel.hpp"
#include "diffsynth/model.hpp"
#include "diffsynth/schedule.hpp"

namespace diffsynth {

struct ScheduleConfig {
  double beta_start = 1e-4;
  double beta_end = 5e-3;
  std::size_t steps = 1000;

  NoiseSchedule build() const { return make_linear_schedule(beta_start, beta_end, steps); }
};

struct TrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  double lambda_dur = 0.1;
  double lambda_mel = 1.0;
  std::size_t checkpoint_every = 500;
  std::vector<std::size_t> eval_steps{5, 100};
  std::size_t warmup_steps = 0;

  void validate() const {
    require_config(batch >= 1, "train.batch: must be >= 1");
    require_config(lr >= 0.0, "train.lr: must be non-negative");
    require_config(beta1 >= 0.0 && beta1 < 1.0, "train.beta1: must lie in [0, 1)");
    require_config(beta2 >= 0.0 && beta2 < 1.0, "train.beta2: must lie in [0, 1)");
    require_config(eps > 0.0, "train.eps: must be positive");
    require_config(clip_norm > 0.0, "train.clip_norm: must be positive");
    require_config(!eval_steps.empty(), "train.eval_steps: must not be empty");
  }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key + ": invalid value type");
  }
}

}  // namespace detail

/// Nested configuration for one run: schedule, data, mel features, model and
/// training, plus the seed and the sampler precision switch. Cross-module
/// consistency is validated before any work starts.
struct RunConfig {
  std::uint64_t seed = 1234;
  ScheduleConfig schedule;
  CorpusConfig data;
  MelConfig mel;
  ModelConfig model;
  TrainConfig train;
  std::string precision = "float32";  // sampler arithmetic: float32 | float64

  void validate() const {
    make_linear_schedule(schedule.beta_start, schedule.beta_end, schedule.steps);
    data.validate();
    mel.validate();
    model.validate();
    train.validate();
    require_config(precision == "float32" || precision == "float64",
                   "precision: must be 'float32' or 'float64'");
    require_config(model.samples_per_frame == data.samples_per_frame,
                   "model.samples_per_frame: must equal data.samples_per_frame");
    require_config(model.vocab_size == data.vocab_size(),
                   "model.vocab_size: must equal data content tokens + silence + eos");
    require_config(mel.sample_rate == data.sample_rate,
                   "mel.sample_rate: must equal data.sample_rate");
    for (std::size_t s : train.eval_steps)
      require_config(s >= 1 && s <= schedule.steps,
                     "train.eval_steps: entries must lie in [1, schedule.N]");
    if (model.multitask) {
      require_config(mel.hop == data.samples_per_frame,
                     "mel.hop: must equal samples_per_frame when multitask is enabled");
      require_config(model.mel_bins == mel.bins,
                     "model.mel_bins: must equal mel.bins when multitask is enabled");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["precision"] = precision;
    j["schedule"] = {{"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end},
                     {"N", schedule.steps}};
    j["data"] = {{"content_tokens", data.content_tokens},
                 {"dur_min", data.dur_min},
                 {"dur_max", data.dur_max},
                 {"dur_jitter", data.dur_jitter},
                 {"tokens_min", data.tokens_min},
                 {"tokens_max", data.tokens_max},
                 {"word_len", data.word_len},
                 {"sample_rate", data.sample_rate},
                 {"samples_per_frame", data.samples_per_frame},
                 {"f0", data.f0},
                 {"train_utterances", data.train_utterances},
                 {"holdout_utterances", data.holdout_utterances}};
    j["mel"] = {{"window", mel.window}, {"hop", mel.hop},   {"fft_size", mel.fft_size},
                {"bins", mel.bins},     {"fmin", mel.fmin}, {"fmax", mel.fmax},
                {"sample_rate", mel.sample_rate}};
    j["model"] = {{"vocab_size", model.vocab_size},
                  {"embedding_dim", model.embedding_dim},
                  {"encoder_channels",
                   std::vector<std::size_t>{model.encoder_channels[0], model.encoder_channels[1],
                                            model.encoder_channels[2]}},
                  {"encoder_kernel", model.encoder_kernel},
                  {"lstm_units", model.lstm_units},
                  {"dropout", model.dropout},
                  {"zoneout", model.zoneout},
                  {"duration_hidden", model.duration_hidden},
                  {"frame_conv_channels", model.frame_conv_channels},
                  {"ublock_channels", model.ublock_channels},
                  {"ublock_factors", model.ublock_factors},
                  {"wave_conv_channels", model.wave_conv_channels},
                  {"dblock_channels", model.dblock_channels},
                  {"noise_embedding_dim", model.noise_embedding_dim},
                  {"samples_per_frame", model.samples_per_frame},
                  {"window_frames", model.window_frames},
                  {"mask_block_len", model.mask_block_len},
                  {"mask_count", model.mask_count},
                  {"mask_enabled", model.mask_enabled},
                  {"multitask", model.multitask},
                  {"mel_bins", model.mel_bins},
                  {"mel_head_channels", model.mel_head_channels}};
    j["train"] = {{"steps", train.steps},
                  {"batch", train.batch},
                  {"lr", train.lr},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"eps", train.eps},
                  {"clip_norm", train.clip_norm},
                  {"lambda_dur", train.lambda_dur},
                  {"lambda_mel", train.lambda_mel},
                  {"checkpoint_every", train.checkpoint_every},
                  {"eval_steps", train.eval_steps},
                  {"warmup_steps", train.warmup_steps}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    using detail::read_field;
    RunConfig c;
    read_field(j, "config", "seed", c.seed);
    read_field(j, "config", "precision", c.precision);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      read_field(s, "schedule", "beta_start", c.schedule.beta_start);
      read_field(s, "schedule", "beta_end", c.schedule.beta_end);
      read_field(s, "schedule", "N", c.schedule.steps);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read_field(d, "data", "content_tokens", c.data.content_tokens);
      read_field(d, "data", "dur_min", c.data.dur_min);
      read_field(d, "data", "dur_max", c.data.dur_max);
      read_field(d, "data", "dur_jitter", c.data.dur_jitter);
      read_field(d, "data", "tokens_min", c.data.tokens_min);
      read_field(d, "data", "tokens_max", c.data.tokens_max);
      read_field(d, "data", "word_len", c.data.word_len);
      read_field(d, "data", "sample_rate", c.data.sample_rate);
      read_field(d, "data", "samples_per_frame", c.data.samples_per_frame);
      read_field(d, "data", "f0", c.data.f0);
      read_field(d, "data", "train_utterances", c.data.train_utterances);
      read_field(d, "data", "holdout_utterances", c.data.holdout_utterances);
    }
    if (j.contains("mel")) {
      const auto& m = j.at("mel");
      read_field(m, "mel", "window", c.mel.window);
      read_field(m, "mel", "hop", c.mel.hop);
      read_field(m, "mel", "fft_size", c.mel.fft_size);
      read_field(m, "mel", "bins", c.mel.bins);
      read_field(m, "mel", "fmin", c.mel.fmin);
      read_field(m, "mel", "fmax", c.mel.fmax);
      read_field(m, "mel", "sample_rate", c.mel.sample_rate);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read_field(m, "model", "vocab_size", c.model.vocab_size);
      read_field(m, "model", "embedding_dim", c.model.embedding_dim);
      if (m.contains("encoder_channels")) {
        std::vector<std::size_t> ch;
        read_field(m, "model", "encoder_channels", ch);
        require_config(ch.size() == 3, "model.encoder_channels: need exactly 3 entries");
        std::copy(ch.begin(), ch.end(), c.model.encoder_channels.begin());
      }
      read_field(m, "model", "encoder_kernel", c.model.encoder_kernel);
      read_field(m, "model", "lstm_units", c.model.lstm_units);
      read_field(m, "model", "dropout", c.model.dropout);
      read_field(m, "model", "zoneout", c.model.zoneout);
      read_field(m, "model", "duration_hidden", c.model.duration_hidden);
      read_field(m, "model", "frame_conv_channels", c.model.frame_conv_channels);
      read_field(m, "model", "ublock_channels", c.model.ublock_channels);
      read_field(m, "model", "ublock_factors", c.model.ublock_factors);
      read_field(m, "model", "wave_conv_channels", c.model.wave_conv_channels);
      read_field(m, "model", "dblock_channels", c.model.dblock_channels);
      read_field(m, "model", "noise_embedding_dim", c.model.noise_embedding_dim);
      read_field(m, "model", "samples_per_frame", c.model.samples_per_frame);
      read_field(m, "model", "window_frames", c.model.window_frames);
      read_field(m, "model", "mask_block_len", c.model.mask_block_len);
      read_field(m, "model", "mask_count", c.model.mask_count);
      read_field(m, "model", "mask_enabled", c.model.mask_enabled);
      read_field(m, "model", "multitask", c.model.multitask);
      read_field(m, "model", "mel_bins", c.model.mel_bins);
      read_field(m, "model", "mel_head_channels", c.model.mel_head_channels);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_field(t, "train", "steps", c.train.steps);
      read_field(t, "train", "batch", c.train.batch);
      read_field(t, "train", "lr", c.train.lr);
      read_field(t, "train", "beta1", c.train.beta1);
      read_field(t, "train", "beta2", c.train.beta2);
      read_field(t, "train", "eps", c.train.eps);
      read_field(t, "train", "clip_norm", c.train.clip_norm);
      read_field(t, "train", "lambda_dur", c.train.lambda_dur);
      read_field(t, "train", "lambda_mel", c.train.lambda_mel);
      read_field(t, "train", "checkpoint_every", c.train.checkpoint_every);
      read_field(t, "train", "eval_steps", c.train.eval_steps);
      read_field(t, "train", "warmup_steps", c.train.warmup_steps);
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("config: cannot write " + path);
    f << to_json().dump(2) << "\n";
  }
};

}  // namespace diffsynth
