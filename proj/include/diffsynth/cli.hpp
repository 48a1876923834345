// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffsynth/config.hpp"
#include "diffsynth/data.hpp"
#include "diffsynth/io.hpp"
#include "diffsynth/train.hpp"

namespace diffsynth::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

inline int cmd_gen_corpus(const RunConfig& cfg, const std::string& out_path) {
  cfg.validate();
  const Corpus corpus = gen_corpus(cfg.data, cfg.seed);
  if (const auto dir = fs::path(out_path).parent_path(); !dir.empty())
    fs::create_directories(dir);
  corpus_write(corpus, out_path);

  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["train_count"] = corpus.train.size();
  manifest["holdout_count"] = corpus.holdout.size();
  manifest["config"] = cfg.to_json()["data"];
  std::ofstream mf(out_path + ".manifest.json");
  mf << manifest.dump(2) << "\n";

  std::cout << "wrote " << corpus.train.size() << " train + " << corpus.holdout.size()
            << " holdout utterances to " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline std::optional<std::pair<fs::path, std::size_t>> latest_checkpoint(
    const std::string& dir) {
  std::optional<std::pair<fs::path, std::size_t>> best;
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && name.size() > 9 && e.path().extension() == ".dsk") {
      const std::size_t step = std::stoull(name.substr(5, name.size() - 9));
      if (!best || step > best->second) best = {e.path(), step};
    }
  }
  return best;
}

inline std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06zu.dsk", step);
  return buf;
}

inline void check_corpus_compat(const RunConfig& cfg, const Corpus& corpus) {
  require_config(corpus.config.samples_per_frame == cfg.data.samples_per_frame,
                 "corpus: samples_per_frame does not match config data.samples_per_frame");
  require_config(corpus.config.sample_rate == cfg.data.sample_rate,
                 "corpus: sample_rate does not match config data.sample_rate");
}

inline int cmd_train(const RunConfig& cfg, const std::string& corpus_path,
                     const std::string& out_dir, bool resume, bool force) {
  cfg.validate();
  Corpus corpus = corpus_read(corpus_path);
  corpus.config = cfg.data;  // waveform-level fields validated for compatibility
  check_corpus_compat(cfg, corpus);
  require(!corpus.train.empty(), "train: corpus has no training utterances");

  const auto existing = latest_checkpoint(out_dir);
  if (existing && !resume && !force)
    throw ConfigError("train: output dir already holds checkpoints; pass --resume or --force");
  fs::create_directories(out_dir);

  Trainer<float> trainer(cfg, &corpus);
  if (existing && resume) {
    trainer.load_checkpoint(existing->first.string());
    std::cout << "resumed from " << existing->first.string() << " at step "
              << trainer.step() << "\n";
  }

  MetricsWriter metrics(out_dir + "/metrics.csv", /*append=*/existing && resume);
  const auto t0 = std::chrono::steady_clock::now();

  if (trainer.step() == 0) trainer.save_checkpoint(out_dir + "/" + checkpoint_name(0));
  while (trainer.step() < cfg.train.steps) {
    const double lr = trainer.current_lr();
    const auto m = trainer.train_step();
    const double wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.row(trainer.step(), m.eps, m.dur, m.mel, lr, wallclock);
    if (cfg.train.checkpoint_every > 0 && trainer.step() % cfg.train.checkpoint_every == 0)
      trainer.save_checkpoint(out_dir + "/" + checkpoint_name(trainer.step()));
  }
  trainer.save_checkpoint(out_dir + "/" + checkpoint_name(trainer.step()));

  if (!corpus.holdout.empty() && cfg.train.steps > 0) {
    const EvalReport report = evaluate(trainer.model(), corpus.holdout, trainer.schedule(),
                                       cfg.train.eval_steps, cfg.mel, cfg.seed);
    std::ofstream rf(out_dir + "/report.json");
    rf << report.to_json_text();
    std::cout << "eval: eps_val=" << report.eps_val << " dur_mse=" << report.dur_mse
              << " noise_baseline=" << report.noise_baseline << "\n";
    for (const auto& row : report.per_steps)
      std::cout << "  steps=" << row.steps << " logmel_teacher=" << row.logmel_teacher
                << " logmel_pred=" << row.logmel_pred << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct CheckpointModel {
  RunConfig cfg;
  Model<float> model;
};

inline CheckpointModel load_model(const std::string& checkpoint_path) {
  const CheckpointData data = checkpoint_read(checkpoint_path);
  const auto manifest = nlohmann::json::parse(data.manifest);
  RunConfig cfg = RunConfig::from_json(manifest.at("run"));
  cfg.validate();
  CheckpointModel out{cfg, Model<float>(cfg.model, cfg.seed)};
  arrays_to_store(data.arrays, out.model.params());
  return out;
}

/// Synthesis with the sampler arithmetic in double precision; the network
/// itself still evaluates in float. Selected by config precision = float64.
inline std::vector<float> synthesize_fp64(Model<float>& model, const std::vector<int>& tokens,
                                          const NoiseSchedule& sched, Rng& rng,
                                          const std::vector<float>* teacher) {
  Rng enc_rng(0);
  const Matrix<float> hiddens = model.encode(tokens, Mode::Eval, enc_rng);
  const auto dp = model.predict_durations(hiddens);
  const std::vector<float> durations = teacher ? *teacher : dp.durations;
  const std::size_t total = total_frames_of<float>(durations);
  const Alignment<float> align(durations, dp.ranges);
  const Matrix<float> frames = gaussian_upsample(hiddens, align, total);
  Matrix<double> frames_d(frames.rows, frames.cols);  // length carrier for sample()
  const auto eps_fn = [&](std::span<const double> y, const Matrix<double>&, double sab) {
    std::vector<float> yf(y.begin(), y.end());
    const auto pred = model.eps_theta(yf, frames, static_cast<float>(sab));
    return std::vector<double>(pred.begin(), pred.end());
  };
  const std::vector<double> wave =
      sample<double>(eps_fn, frames_d, model.config().samples_per_frame, sched, rng);
  return std::vector<float>(wave.begin(), wave.end());
}

inline int cmd_synth(const std::string& checkpoint_path, const std::vector<int>& tokens,
                     const std::vector<std::size_t>& steps_list, std::uint64_t seed,
                     const std::string& out_wav, const std::vector<float>* teacher = nullptr,
                     const std::vector<float>* reference = nullptr) {
  require(!steps_list.empty(), "synth: need at least one step count");
  CheckpointModel cm = load_model(checkpoint_path);
  const NoiseSchedule train_sched = cm.cfg.schedule.build();
  const std::uint32_t sr = static_cast<std::uint32_t>(cm.cfg.data.sample_rate);

  const fs::path out_path(out_wav);
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  const std::string stem = (out_path.parent_path() / out_path.stem()).string();

  struct Rendered {
    std::size_t steps;
    std::string path;
    std::vector<float> wave;
  };
  std::vector<Rendered> rendered;
  for (const std::size_t steps : steps_list) {
    const NoiseSchedule sched = inference_schedule(train_sched, steps);
    Rng rng(derive_seed(seed, kTagSynthCli, steps));
    std::vector<float> wave;
    if (cm.cfg.precision == "float64") {
      wave = synthesize_fp64(cm.model, tokens, sched, rng, teacher);
    } else {
      wave = cm.model.synthesize(tokens, sched, rng, teacher).waveform;
    }
    const std::string path = steps_list.size() == 1
                                 ? out_wav
                                 : stem + "_steps" + std::to_string(steps) + ".wav";
    wav_write<float>(wave, sr, path);
    std::cout << "wrote " << path << " (" << wave.size() << " samples, " << steps << " steps)\n";
    rendered.push_back({steps, path, std::move(wave)});
  }

  if (rendered.size() > 1 || reference != nullptr) {
    const auto& best = *std::max_element(rendered.begin(), rendered.end(),
                                         [](const auto& a, const auto& b) {
                                           return a.steps < b.steps;
                                         });
    const Matrix<double> best_mel = mel_spectrogram<float>(best.wave, cm.cfg.mel);
    std::ofstream sidecar(stem + "_distances.csv");
    sidecar << "steps,logmel_vs_max_steps,logmel_vs_reference\n";
    for (const auto& r : rendered) {
      const Matrix<double> m = mel_spectrogram<float>(r.wave, cm.cfg.mel);
      sidecar << r.steps << "," << fmt_g17(log_mel_distance(m, best_mel)) << ",";
      if (reference != nullptr) {
        const Matrix<double> ref_mel = mel_spectrogram<float>(*reference, cm.cfg.mel);
        sidecar << fmt_g17(log_mel_distance(m, ref_mel));
      }
      sidecar << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
                    const std::vector<std::size_t>& steps_list, std::uint64_t seed,
                    const std::string& out_path) {
  CheckpointModel cm = load_model(checkpoint_path);
  const Corpus corpus = corpus_read(corpus_path);
  require(!corpus.holdout.empty(), "eval: corpus has no holdout utterances");
  const NoiseSchedule sched = cm.cfg.schedule.build();
  const auto steps = steps_list.empty() ? cm.cfg.train.eval_steps : steps_list;
  const EvalReport report =
      evaluate(cm.model, corpus.holdout, sched, steps, cm.cfg.mel, seed);
  if (const auto dir = fs::path(out_path).parent_path(); !dir.empty())
    fs::create_directories(dir);
  std::ofstream f(out_path);
  f << report.to_json_text();
  std::cout << report.to_json_text();
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  double eps_val = 0.0;
  double logmel_teacher = 0.0;
  double logmel_pred = 0.0;
  double dur_mse = 0.0;
};

inline ModelConfig scaled_model(const ModelConfig& base, double factor) {
  ModelConfig m = base;
  const auto scale = [&](std::size_t v) {
    return std::max<std::size_t>(4, static_cast<std::size_t>(v * factor));
  };
  for (auto& c : m.encoder_channels) c = scale(c);
  m.embedding_dim = scale(m.embedding_dim);
  m.lstm_units = scale(m.lstm_units);
  m.duration_hidden = scale(m.duration_hidden);
  m.frame_conv_channels = scale(m.frame_conv_channels);
  for (auto& c : m.ublock_channels) c = scale(c);
  for (auto& c : m.dblock_channels) c = scale(c);
  m.wave_conv_channels = scale(m.wave_conv_channels);
  return m;
}

inline AblationRow run_variant(const std::string& name, const RunConfig& cfg,
                               const Corpus& corpus) {
  Trainer<float> trainer(cfg, &corpus);
  while (trainer.step() < cfg.train.steps) trainer.train_step();
  const std::size_t max_steps =
      *std::max_element(cfg.train.eval_steps.begin(), cfg.train.eval_steps.end());
  const EvalReport report = evaluate(trainer.model(), corpus.holdout, trainer.schedule(),
                                     {max_steps}, cfg.mel, cfg.seed);
  AblationRow row;
  row.variant = name;
  row.params = trainer.model().params().total_trainable();
  row.eps_val = report.eps_val;
  row.logmel_teacher = report.per_steps[0].logmel_teacher;
  row.logmel_pred = report.per_steps[0].logmel_pred;
  row.dur_mse = report.dur_mse;
  return row;
}

inline void write_ablation_table(const std::vector<AblationRow>& rows, const std::string& axis,
                                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir + "/ablation_" + axis + ".csv");
  csv << "variant,params,eps_val,logmel_teacher,logmel_pred,dur_mse\n";
  for (const auto& r : rows)
    csv << r.variant << "," << r.params << "," << fmt_g17(r.eps_val) << ","
        << fmt_g17(r.logmel_teacher) << "," << fmt_g17(r.logmel_pred) << ","
        << fmt_g17(r.dur_mse) << "\n";

  std::ofstream txt(out_dir + "/ablation_" + axis + ".txt");
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %12s %12s %16s %14s %10s\n", "variant", "params",
                "eps_val", "logmel_teacher", "logmel_pred", "dur_mse");
  txt << buf;
  std::cout << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %12zu %12.4f %16.4f %14.4f %10.4f\n",
                  r.variant.c_str(), r.params, r.eps_val, r.logmel_teacher, r.logmel_pred,
                  r.dur_mse);
    txt << buf;
    std::cout << buf;
  }
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& corpus_path,
                      const std::string& axis, const std::string& out_dir,
                      const std::string& checkpoint = "") {
  cfg.validate();
  require_config(axis == "window" || axis == "size" || axis == "mask" || axis == "multitask" ||
                     axis == "steps",
                 "ablate: axis must be one of window|size|mask|multitask|steps");
  Corpus corpus = corpus_read(corpus_path);
  corpus.config = cfg.data;
  check_corpus_compat(cfg, corpus);
  std::vector<AblationRow> rows;

  if (axis == "steps") {
    // One checkpoint, several step counts; no retraining.
    Trainer<float> trainer(cfg, &corpus);
    if (!checkpoint.empty()) {
      trainer.load_checkpoint(checkpoint);
    } else {
      while (trainer.step() < cfg.train.steps) trainer.train_step();
    }
    for (const std::size_t s : cfg.train.eval_steps) {
      const EvalReport report = evaluate(trainer.model(), corpus.holdout, trainer.schedule(),
                                         {s}, cfg.mel, cfg.seed);
      AblationRow row;
      row.variant = "steps_" + std::to_string(s);
      row.params = trainer.model().params().total_trainable();
      row.eps_val = report.eps_val;
      row.logmel_teacher = report.per_steps[0].logmel_teacher;
      row.logmel_pred = report.per_steps[0].logmel_pred;
      row.dur_mse = report.dur_mse;
      rows.push_back(row);
    }
  } else if (axis == "window") {
    const bool paper_rate = cfg.data.samples_per_frame == 300;
    for (const std::size_t w :
         std::vector<std::size_t>{paper_rate ? 64u : 16u, paper_rate ? 256u : 64u}) {
      RunConfig v = cfg;
      v.model.window_frames = w;
      rows.push_back(run_variant("window_" + std::to_string(w), v, corpus));
    }
  } else if (axis == "size") {
    for (const auto& [name, factor] :
         std::vector<std::pair<std::string, double>>{{"size_small", 0.5}, {"size_base", 1.0}}) {
      RunConfig v = cfg;
      v.model = scaled_model(cfg.model, factor);
      rows.push_back(run_variant(name, v, corpus));
    }
  } else if (axis == "mask") {
    for (const bool on : {false, true}) {
      RunConfig v = cfg;
      v.model.mask_enabled = on;
      rows.push_back(run_variant(on ? "mask_on" : "mask_off", v, corpus));
    }
  } else {  // multitask
    for (const bool on : {false, true}) {
      RunConfig v = cfg;
      v.model.multitask = on;
      rows.push_back(run_variant(on ? "multitask_on" : "multitask_off", v, corpus));
    }
  }

  write_ablation_table(rows, axis, out_dir);
  return 0;
}

}  // namespace diffsynth::cli
