// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: corpus generation, training, synthesis,
// evaluation and ablation sweeps.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diffsynth/cli.hpp"
#include "diffsynth/config.hpp"

namespace {

diffsynth::RunConfig load_config(const std::string& path, std::int64_t seed_override) {
  diffsynth::RunConfig cfg;
  if (!path.empty()) cfg = diffsynth::RunConfig::load(path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> parse_steps_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  return out;
}

std::vector<int> parse_tokens(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion phoneme-to-waveform synthesizer"};
  app.require_subcommand(1);

  std::string config_path, corpus_path, out_path, checkpoint_path, tokens_str, axis, steps_str;
  std::int64_t seed = -1;
  std::int64_t steps_override = -1;
  std::int64_t corpus_index = -1;
  bool resume = false, force = false, teacher = false;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  gen->add_option("--config", config_path, "config JSON path");
  gen->add_option("--seed", seed, "seed override");
  gen->add_option("--out", out_path, "output corpus file")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "config JSON path");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--corpus", corpus_path, "corpus file")->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--steps", steps_override, "training step override");
  train->add_flag("--resume", resume, "resume from latest checkpoint");
  train->add_flag("--force", force, "overwrite existing outputs");

  auto* synth = app.add_subcommand("synth", "synthesize a waveform");
  synth->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  synth->add_option("--tokens", tokens_str, "comma-separated token ids");
  synth->add_option("--corpus", corpus_path, "corpus file (with --index)");
  synth->add_option("--index", corpus_index, "holdout utterance index");
  synth->add_option("--steps", steps_str, "comma-separated refinement step counts");
  synth->add_option("--seed", seed, "sampler seed");
  synth->add_option("--out", out_path, "output wav path")->required();
  synth->add_flag("--teacher", teacher, "use ground-truth durations (needs --corpus/--index)");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the holdout");
  evalc->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  evalc->add_option("--corpus", corpus_path, "corpus file")->required();
  evalc->add_option("--steps", steps_str, "comma-separated step counts");
  evalc->add_option("--seed", seed, "evaluation seed");
  evalc->add_option("--out", out_path, "report path")->required();

  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  ablate->add_option("--config", config_path, "config JSON path");
  ablate->add_option("--seed", seed, "seed override");
  ablate->add_option("--corpus", corpus_path, "corpus file")->required();
  ablate->add_option("--axis", axis, "window|size|mask|multitask|steps")->required();
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--checkpoint", checkpoint_path, "existing checkpoint (axis=steps)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return diffsynth::cli::cmd_gen_corpus(load_config(config_path, seed), out_path);
    }
    if (train->parsed()) {
      auto cfg = load_config(config_path, seed);
      if (steps_override >= 0) cfg.train.steps = static_cast<std::size_t>(steps_override);
      return diffsynth::cli::cmd_train(cfg, corpus_path, out_path, resume, force);
    }
    if (synth->parsed()) {
      std::vector<int> tokens;
      std::vector<float> teacher_durs;
      std::vector<float> reference;
      const std::vector<float>* teacher_ptr = nullptr;
      const std::vector<float>* reference_ptr = nullptr;
      if (!tokens_str.empty()) {
        tokens = parse_tokens(tokens_str);
      } else {
        if (corpus_path.empty() || corpus_index < 0)
          throw diffsynth::ConfigError("synth: need --tokens or --corpus with --index");
        const auto corpus = diffsynth::corpus_read(corpus_path);
        const auto& pool = corpus.holdout.empty() ? corpus.train : corpus.holdout;
        if (static_cast<std::size_t>(corpus_index) >= pool.size())
          throw diffsynth::ConfigError("synth: --index out of range");
        const auto& utt = pool[static_cast<std::size_t>(corpus_index)];
        tokens = utt.tokens;
        reference = utt.samples;
        reference_ptr = &reference;
        if (teacher) {
          teacher_durs.assign(utt.durations.begin(), utt.durations.end());
          teacher_ptr = &teacher_durs;
        }
      }
      auto steps = parse_steps_list(steps_str);
      if (steps.empty()) steps = {50};
      return diffsynth::cli::cmd_synth(checkpoint_path, tokens, steps,
                                       seed >= 0 ? static_cast<std::uint64_t>(seed) : 1234,
                                       out_path, teacher_ptr, reference_ptr);
    }
    if (evalc->parsed()) {
      return diffsynth::cli::cmd_eval(checkpoint_path, corpus_path, parse_steps_list(steps_str),
                                      seed >= 0 ? static_cast<std::uint64_t>(seed) : 1234,
                                      out_path);
    }
    if (ablate->parsed()) {
      return diffsynth::cli::cmd_ablate(load_config(config_path, seed), corpus_path, axis,
                                        out_path, checkpoint_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
