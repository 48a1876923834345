// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "diffsynth/config.hpp"
#include "diffsynth/data.hpp"
#include "diffsynth/io.hpp"
#include "diffsynth/mel.hpp"
#include "diffsynth/model.hpp"

namespace diffsynth {

// Stream tags for derived rng seeds.
constexpr std::uint64_t kTagBatch = 0x6261ull;
constexpr std::uint64_t kTagExample = 0x6578ull;
constexpr std::uint64_t kTagEvalEps = 0x6565ull;
constexpr std::uint64_t kTagEvalNoise = 0x656eull;
constexpr std::uint64_t kTagSynthTeacher = 0x7374ull;
constexpr std::uint64_t kTagSynthPred = 0x7370ull;
constexpr std::uint64_t kTagSynthCli = 0x7363ull;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Real>
struct AdamState {
  std::vector<std::vector<Real>> m, v;  // aligned with store entries
  std::size_t step = 0;

  template <typename Store>
  void init(const Store& store) {
    m.clear();
    v.clear();
    for (const auto& e : store) {
      m.emplace_back(e.trainable ? e.value.size() : 0, Real(0));
      v.emplace_back(e.trainable ? e.value.size() : 0, Real(0));
    }
    step = 0;
  }
};

/// Bias-corrected Adam over every trainable entry; gradients are read from
/// the co-indexed grad arrays. Non-finite gradients abort, naming the tensor.
template <typename Real>
void adam_update(ParamStore<Real>& store, AdamState<Real>& opt, double lr, double beta1,
                 double beta2, double eps) {
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
  std::size_t idx = 0;
  for (auto& e : store) {
    if (!e.trainable) {
      ++idx;
      continue;
    }
    auto& m = opt.m[idx];
    auto& v = opt.v[idx];
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = static_cast<double>(e.grad[i]);
      if (!std::isfinite(g))
        throw std::runtime_error("adam_update: non-finite gradient in tensor '" + e.name + "'");
      const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
      const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
      e.value[i] = static_cast<Real>(static_cast<double>(e.value[i]) - update);
    }
    ++idx;
  }
}

/// Scales gradients so their global L2 norm does not exceed max_norm.
/// Returns the pre-clip norm.
template <typename Real>
double clip_gradients(ParamStore<Real>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& e : store) {
    if (!e.trainable) continue;
    for (const Real g : e.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (auto& e : store) {
      if (!e.trainable) continue;
      for (auto& g : e.grad) g *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Deterministic number formatting for reports
// ---------------------------------------------------------------------------

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Metrics stream: append-only CSV
// ---------------------------------------------------------------------------

class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& path, bool append) {
    const bool fresh = !append || !std::ifstream(path).good();
    file_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!file_) throw IoError("metrics: cannot open " + path);
    if (fresh) file_ << "step,eps_loss,dur_loss,mel_loss,lr,wallclock\n";
  }

  void row(std::size_t step, double eps, double dur, double mel, double lr, double wallclock) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.3f\n", step, eps, dur, mel, lr,
                  wallclock);
    file_ << buf;
    file_.flush();
  }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalPerSteps {
  std::size_t steps = 0;
  double logmel_teacher = 0.0;
  double logmel_pred = 0.0;
};

struct EvalReport {
  double eps_val = 0.0;
  double dur_mse = 0.0;
  double dur_mse_baseline = 0.0;
  double total_dur_err = 0.0;
  double noise_baseline = 0.0;
  std::vector<EvalPerSteps> per_steps;

  std::string to_json_text() const {
    std::string s = "{\n";
    s += "  \"eps_val\": " + fmt_g17(eps_val) + ",\n";
    s += "  \"dur_mse\": " + fmt_g17(dur_mse) + ",\n";
    s += "  \"dur_mse_baseline\": " + fmt_g17(dur_mse_baseline) + ",\n";
    s += "  \"total_dur_err\": " + fmt_g17(total_dur_err) + ",\n";
    s += "  \"noise_baseline\": " + fmt_g17(noise_baseline) + ",\n";
    s += "  \"per_steps\": [";
    for (std::size_t i = 0; i < per_steps.size(); ++i) {
      if (i) s += ",";
      s += "\n    {\"steps\": " + std::to_string(per_steps[i].steps) +
           ", \"logmel_teacher\": " + fmt_g17(per_steps[i].logmel_teacher) +
           ", \"logmel_pred\": " + fmt_g17(per_steps[i].logmel_pred) + "}";
    }
    s += "\n  ]\n}\n";
    return s;
  }
};

/// Evaluation-mode epsilon loss over the full utterance, averaged over
/// n_draws independent (noise level, noise) draws.
template <typename Real>
double validation_eps_loss(Model<Real>& model, const Utterance& utt,
                           const NoiseSchedule& schedule, Rng& rng, std::size_t n_draws) {
  Rng enc_rng(0);
  const Matrix<Real> hiddens = model.encode(utt.tokens, Mode::Eval, enc_rng);
  const auto dp = model.predict_durations(hiddens);
  std::vector<Real> true_durs(utt.durations.begin(), utt.durations.end());
  const Alignment<Real> align(true_durs, dp.ranges);
  const std::size_t total = total_frames_of<Real>(true_durs);
  const Matrix<Real> frames = gaussian_upsample(hiddens, align, total);
  std::vector<Real> y0(utt.samples.begin(), utt.samples.end());
  double acc = 0.0;
  for (std::size_t k = 0; k < n_draws; ++k) {
    const double sab = sample_noise_level(schedule, rng);
    std::vector<Real> eps(y0.size());
    rng.fill_normal<Real>(eps);
    const auto y_noisy = forward_diffuse<Real>(y0, static_cast<Real>(sab), eps);
    const auto pred = model.eps_theta(y_noisy, frames, static_cast<Real>(sab));
    acc += static_cast<double>(epsilon_loss<Real>(pred, eps));
  }
  return acc / static_cast<double>(n_draws);
}

/// Objective evaluation: for each holdout utterance and each step count, full
/// synthesis with teacher and with predicted durations; reports epsilon
/// validation loss, log-mel distances, duration MSE against the mean
/// predictor, and the pure-noise log-mel baseline. Deterministic given seed.
template <typename Real>
EvalReport evaluate(Model<Real>& model, const std::vector<Utterance>& holdout,
                    const NoiseSchedule& train_schedule,
                    const std::vector<std::size_t>& steps_list, const MelConfig& mel_cfg,
                    std::uint64_t seed) {
  require(!holdout.empty(), "evaluate: empty holdout");
  EvalReport report;

  // Duration statistics and the mean-duration baseline.
  double se = 0.0, se_base = 0.0, dur_err = 0.0;
  std::size_t n_tokens = 0;
  double mean_dur = 0.0;
  for (const auto& u : holdout)
    for (int d : u.durations) {
      mean_dur += d;
      ++n_tokens;
    }
  mean_dur /= static_cast<double>(n_tokens);
  for (const auto& u : holdout) {
    Rng enc_rng(0);
    const Matrix<Real> hiddens = model.encode(u.tokens, Mode::Eval, enc_rng);
    const auto dp = model.predict_durations(hiddens);
    double pred_total = 0.0, true_total = 0.0;
    for (std::size_t t = 0; t < u.durations.size(); ++t) {
      const double d = static_cast<double>(dp.durations[t]) - u.durations[t];
      se += d * d;
      const double db = mean_dur - u.durations[t];
      se_base += db * db;
      pred_total += static_cast<double>(dp.durations[t]);
      true_total += u.durations[t];
    }
    dur_err += std::abs(pred_total - true_total);
  }
  report.dur_mse = se / static_cast<double>(n_tokens);
  report.dur_mse_baseline = se_base / static_cast<double>(n_tokens);
  report.total_dur_err = dur_err / static_cast<double>(holdout.size());

  // Epsilon validation loss.
  double eps_acc = 0.0;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    Rng rng(derive_seed(seed, kTagEvalEps, i));
    eps_acc += validation_eps_loss(model, holdout[i], train_schedule, rng, 4);
  }
  report.eps_val = eps_acc / static_cast<double>(holdout.size());

  // Pure-noise log-mel baseline.
  std::vector<Matrix<double>> ref_mels(holdout.size());
  double noise_acc = 0.0;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    ref_mels[i] = mel_spectrogram<float>(holdout[i].samples, mel_cfg);
    Rng rng(derive_seed(seed, kTagEvalNoise, i));
    std::vector<double> noise(holdout[i].samples.size());
    rng.fill_normal<double>(noise);
    noise_acc += log_mel_distance(ref_mels[i], mel_spectrogram<double>(noise, mel_cfg));
  }
  report.noise_baseline = noise_acc / static_cast<double>(holdout.size());

  // Synthesis sweeps.
  for (const std::size_t steps : steps_list) {
    const NoiseSchedule sched = inference_schedule(train_schedule, steps);
    EvalPerSteps row;
    row.steps = steps;
    double acc_teacher = 0.0, acc_pred = 0.0;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
      const auto& u = holdout[i];
      std::vector<Real> teacher(u.durations.begin(), u.durations.end());
      Rng rng_t(derive_seed(seed, kTagSynthTeacher, steps, i));
      const auto out_t = model.synthesize(u.tokens, sched, rng_t, &teacher);
      acc_teacher += log_mel_distance(ref_mels[i], mel_spectrogram<Real>(out_t.waveform, mel_cfg));
      Rng rng_p(derive_seed(seed, kTagSynthPred, steps, i));
      const auto out_p = model.synthesize(u.tokens, sched, rng_p, nullptr);
      acc_pred += log_mel_distance(ref_mels[i], mel_spectrogram<Real>(out_p.waveform, mel_cfg));
    }
    row.logmel_teacher = acc_teacher / static_cast<double>(holdout.size());
    row.logmel_pred = acc_pred / static_cast<double>(holdout.size());
    report.per_steps.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <typename Real>
struct StepMetrics {
  double eps = 0.0, dur = 0.0, mel = 0.0, total = 0.0;
  double grad_norm = 0.0;
};

/// Owns the train state: model parameters, optimizer moments, step counter
/// and the seed lineage. One (noise level, noise) draw per utterance per
/// step; per-step rng streams are derived from (seed, step, slot) so a
/// resumed run continues the exact trace.
template <typename Real>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Corpus* corpus)
      : cfg_(cfg), corpus_(corpus), model_(cfg.model, cfg.seed),
        schedule_(cfg.schedule.build()) {
    opt_.init(model_.params());
    if (cfg_.model.multitask) mel_targets_.resize(corpus_->train.size());
  }

  Model<Real>& model() { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  std::size_t step() const { return step_; }

  StepMetrics<Real> train_step() {
    auto& store = model_.params();
    store.zero_grads();
    Rng batch_rng(derive_seed(cfg_.seed, kTagBatch, step_));
    StepMetrics<Real> metrics;
    const std::size_t batch = cfg_.train.batch;
    for (std::size_t slot = 0; slot < batch; ++slot) {
      const std::size_t idx =
          static_cast<std::size_t>(batch_rng.uniform_int(corpus_->train.size()));
      const Utterance& utt = corpus_->train[idx];
      Rng ex_rng(derive_seed(cfg_.seed, kTagExample, step_, slot));
      const Matrix<Real>* mel_target = cfg_.model.multitask ? mel_target_for(idx) : nullptr;
      std::vector<Real> durs(utt.durations.begin(), utt.durations.end());
      const auto losses = model_.train_example(
          utt.tokens, durs, std::span<const Real>(utt.samples.data(), utt.samples.size()),
          mel_target, schedule_, ex_rng, static_cast<Real>(cfg_.train.lambda_dur),
          static_cast<Real>(cfg_.train.lambda_mel));
      if (!std::isfinite(static_cast<double>(losses.total)))
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(step_) +
                                 " (eps=" + std::to_string(static_cast<double>(losses.eps)) +
                                 " dur=" + std::to_string(static_cast<double>(losses.dur)) +
                                 " mel=" + std::to_string(static_cast<double>(losses.mel)) + ")");
      metrics.eps += static_cast<double>(losses.eps);
      metrics.dur += static_cast<double>(losses.dur);
      metrics.mel += static_cast<double>(losses.mel);
      metrics.total += static_cast<double>(losses.total);
    }
    const Real inv_batch = Real(1) / static_cast<Real>(batch);
    for (auto& e : store) {
      if (!e.trainable) continue;
      for (auto& g : e.grad) g *= inv_batch;
    }
    metrics.eps /= static_cast<double>(batch);
    metrics.dur /= static_cast<double>(batch);
    metrics.mel /= static_cast<double>(batch);
    metrics.total /= static_cast<double>(batch);
    metrics.grad_norm = clip_gradients(store, cfg_.train.clip_norm);
    adam_update(store, opt_, current_lr(), cfg_.train.beta1, cfg_.train.beta2, cfg_.train.eps);
    ++step_;
    return metrics;
  }

  double current_lr() const {
    if (cfg_.train.warmup_steps > 0 && step_ < cfg_.train.warmup_steps)
      return cfg_.train.lr * static_cast<double>(step_ + 1) /
             static_cast<double>(cfg_.train.warmup_steps);
    return cfg_.train.lr;
  }

  void save_checkpoint(const std::string& path) const {
    std::vector<NamedArray> arrays = store_to_arrays(model_.params());
    std::size_t idx = 0;
    for (const auto& e : model_.params()) {
      if (e.trainable) {
        NamedArray m;
        m.name = "optim.m." + e.name;
        m.shape = e.shape;
        m.data.assign(opt_.m[idx].begin(), opt_.m[idx].end());
        arrays.push_back(std::move(m));
        NamedArray v;
        v.name = "optim.v." + e.name;
        v.shape = e.shape;
        v.data.assign(opt_.v[idx].begin(), opt_.v[idx].end());
        arrays.push_back(std::move(v));
      }
      ++idx;
    }
    nlohmann::json manifest;
    manifest["format"] = "diffsynth-checkpoint";
    manifest["step"] = step_;
    manifest["opt_step"] = opt_.step;
    manifest["run"] = cfg_.to_json();
    checkpoint_write(arrays, manifest.dump(), path);
  }

  void load_checkpoint(const std::string& path) {
    const CheckpointData data = checkpoint_read(path);
    const auto manifest = nlohmann::json::parse(data.manifest);
    step_ = manifest.at("step").get<std::size_t>();
    opt_.step = manifest.at("opt_step").get<std::size_t>();
    arrays_to_store(data.arrays, model_.params());
    // Optimizer moments by name.
    std::size_t idx = 0;
    for (const auto& e : model_.params()) {
      if (e.trainable) {
        for (const auto& a : data.arrays) {
          if (a.name == "optim.m." + e.name)
            opt_.m[idx].assign(a.data.begin(), a.data.end());
          else if (a.name == "optim.v." + e.name)
            opt_.v[idx].assign(a.data.begin(), a.data.end());
        }
      }
      ++idx;
    }
  }

 private:
  const Matrix<Real>* mel_target_for(std::size_t idx) {
    if (!mel_targets_[idx].has_value()) {
      const auto mel_d = mel_spectrogram<float>(corpus_->train[idx].samples, cfg_.mel);
      Matrix<Real> m(mel_d.rows, mel_d.cols);
      for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = static_cast<Real>(mel_d.data[i]);
      mel_targets_[idx] = std::move(m);
    }
    return &mel_targets_[idx].value();
  }

  RunConfig cfg_;
  const Corpus* corpus_;
  Model<Real> model_;
  NoiseSchedule schedule_;
  AdamState<Real> opt_;
  std::size_t step_ = 0;
  std::vector<std::optional<Matrix<Real>>> mel_targets_;
};

}  // namespace diffsynth
