// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "diffsynth/align.hpp"
#include "diffsynth/common.hpp"
#include "diffsynth/diffusion.hpp"
#include "diffsynth/nn/blocks.hpp"
#include "diffsynth/nn/film.hpp"
#include "diffsynth/nn/lstm.hpp"
#include "diffsynth/nn/ops.hpp"
#include "diffsynth/nn/param_store.hpp"
#include "diffsynth/rng.hpp"
#include "diffsynth/schedule.hpp"

namespace diffsynth {

struct ModelConfig {
  std::size_t vocab_size = 14;  // content tokens + silence + end-of-sequence
  std::size_t embedding_dim = 32;
  std::array<std::size_t, 3> encoder_channels{48, 48, 48};
  std::size_t encoder_kernel = 5;
  std::size_t lstm_units = 32;
  double dropout = 0.1;
  double zoneout = 0.1;
  std::size_t duration_hidden = 32;

  std::size_t frame_conv_channels = 64;
  std::vector<std::size_t> ublock_channels{48, 32, 24, 16};
  std::vector<std::size_t> ublock_factors{5, 2, 2, 2};
  std::size_t wave_conv_channels = 8;
  std::vector<std::size_t> dblock_channels{16, 24, 48};
  std::size_t noise_embedding_dim = 32;

  std::size_t samples_per_frame = 40;
  std::size_t window_frames = 32;
  std::size_t mask_block_len = 32;
  std::size_t mask_count = 2;
  bool mask_enabled = false;
  bool multitask = false;
  std::size_t mel_bins = 32;
  std::size_t mel_head_channels = 32;

  std::size_t encoder_out_dim() const { return 2 * lstm_units; }

  void validate() const {
    require_config(vocab_size >= 3, "model.vocab_size: need content + silence + eos tokens");
    require_config(embedding_dim >= 1, "model.embedding_dim: must be positive");
    require_config(lstm_units >= 1, "model.lstm_units: must be positive");
    require_config(!ublock_channels.empty(), "model.ublock_channels: must not be empty");
    require_config(ublock_channels.size() == ublock_factors.size(),
                   "model.ublock_channels: count must match ublock_factors");
    require_config(dblock_channels.size() + 1 == ublock_factors.size(),
                   "model.dblock_channels: need one fewer than ublock_factors");
    std::size_t prod = 1;
    for (std::size_t f : ublock_factors) {
      require_config(f >= 1, "model.ublock_factors: factors must be positive");
      prod *= f;
    }
    require_config(prod == samples_per_frame,
                   "model.ublock_factors: product must equal samples_per_frame");
    require_config(window_frames >= 1, "model.window_frames: must be >= 1");
    require_config(noise_embedding_dim % 2 == 0 && noise_embedding_dim >= 2,
                   "model.noise_embedding_dim: must be even");
    require_config(dropout >= 0.0 && dropout < 1.0, "model.dropout: must lie in [0, 1)");
    require_config(zoneout >= 0.0 && zoneout < 1.0, "model.zoneout: must lie in [0, 1)");
    if (multitask) require_config(mel_bins >= 1, "model.mel_bins: must be positive");
  }
};

/// Zeroes `count` independently chosen contiguous frame spans (training-time
/// conditioning augmentation). Spans longer than the sequence clamp to it.
template <typename Real>
struct MaskResult {
  Matrix<Real> frames;
  std::vector<unsigned char> kept;  // per-frame: 0 if zeroed
};

template <typename Real>
MaskResult<Real> mask_blocks(const Matrix<Real>& frames, Rng& rng, std::size_t block_len,
                             std::size_t count) {
  MaskResult<Real> out;
  out.frames = frames;
  out.kept.assign(frames.rows, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = std::min(block_len, frames.rows);
    const std::size_t start =
        len == frames.rows ? 0 : static_cast<std::size_t>(rng.uniform_int(frames.rows - len + 1));
    for (std::size_t t = start; t < start + len; ++t) {
      out.kept[t] = 0;
      std::fill(out.frames.row(t), out.frames.row(t) + frames.cols, Real(0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Real>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<Real>& store, const ModelConfig& cfg, Rng& init)
      : dropout_rate_(cfg.dropout),
        zoneout_rate_(cfg.zoneout),
        embedding_(store, "encoder.embedding", cfg.vocab_size, cfg.embedding_dim, init),
        rnn_(store, "encoder.rnn", cfg.encoder_channels[2], cfg.lstm_units, init) {
    std::size_t in = cfg.embedding_dim;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string base = "encoder.conv" + std::to_string(i + 1);
      convs_[i] = Conv1d<Real>(store, base, in, cfg.encoder_channels[i], cfg.encoder_kernel, init);
      norms_[i] = BatchNorm1d<Real>(store, base + ".bn", cfg.encoder_channels[i]);
      drops_[i].rate = cfg.dropout;
      in = cfg.encoder_channels[i];
    }
  }

  Matrix<Real> forward(ParamStore<Real>& store, const std::vector<int>& tokens, Mode mode,
                       Rng& rng) {
    require(!tokens.empty(), "encoder: empty token sequence");
    Matrix<Real> x = embedding_.forward(store, tokens);
    for (std::size_t i = 0; i < 3; ++i) {
      x = convs_[i].forward(store, x);
      x = norms_[i].forward(store, x, mode);
      x = acts_[i].forward(x);
      x = drops_[i].forward(x, mode, rng);
    }
    return rnn_.forward(store, x, zoneout_rate_, mode, rng);
  }

  void backward(ParamStore<Real>& store, const Matrix<Real>& grad_hiddens) {
    Matrix<Real> g = rnn_.backward(store, grad_hiddens);
    for (std::size_t i = 3; i-- > 0;) {
      g = drops_[i].backward(g);
      g = acts_[i].backward(g);
      g = norms_[i].backward(store, g);
      g = convs_[i].backward(store, g);
    }
    embedding_.backward(store, g);
  }

 private:
  double dropout_rate_ = 0.0, zoneout_rate_ = 0.0;
  Embedding<Real> embedding_;
  std::array<Conv1d<Real>, 3> convs_;
  std::array<BatchNorm1d<Real>, 3> norms_;
  std::array<Relu<Real>, 3> acts_;
  std::array<Dropout<Real>, 3> drops_;
  BiLstm<Real> rnn_;
};

// ---------------------------------------------------------------------------

/// Regresses per-token duration (frames) and Gaussian influence range from
/// encoder hiddens. Both are kept positive through softplus; ranges carry a
/// 0.1-frame floor so upsampling weights never degenerate.
template <typename Real>
class DurationPredictor {
 public:
  static constexpr Real kRangeFloor = Real(0.1);

  DurationPredictor() = default;
  DurationPredictor(ParamStore<Real>& store, const ModelConfig& cfg, Rng& init)
      : conv1_(store, "duration.conv1", cfg.encoder_out_dim(), cfg.duration_hidden, 3, init),
        conv2_(store, "duration.conv2", cfg.duration_hidden, cfg.duration_hidden, 3, init),
        proj_(store, "duration.proj", cfg.duration_hidden, 2, init) {}

  struct Output {
    std::vector<Real> durations;
    std::vector<Real> ranges;
  };

  Output forward(const ParamStore<Real>& store, const Matrix<Real>& hiddens) {
    Matrix<Real> x = conv1_.forward(store, hiddens);
    x = act1_.forward(x);
    x = conv2_.forward(store, x);
    x = act2_.forward(x);
    raw_ = proj_.forward(store, x);
    Output out;
    out.durations.resize(hiddens.rows);
    out.ranges.resize(hiddens.rows);
    for (std::size_t t = 0; t < hiddens.rows; ++t) {
      out.durations[t] = softplus(raw_.at(t, 0));
      out.ranges[t] = kRangeFloor + softplus(raw_.at(t, 1));
    }
    return out;
  }

  Matrix<Real> backward(ParamStore<Real>& store, std::span<const Real> grad_durations,
                        std::span<const Real> grad_ranges) {
    Matrix<Real> graw(raw_.rows, 2);
    for (std::size_t t = 0; t < raw_.rows; ++t) {
      graw.at(t, 0) = grad_durations[t] * sigmoid(raw_.at(t, 0));
      graw.at(t, 1) = grad_ranges[t] * sigmoid(raw_.at(t, 1));
    }
    Matrix<Real> g = proj_.backward(store, graw);
    g = act2_.backward(g);
    g = conv2_.backward(store, g);
    g = act1_.backward(g);
    return conv1_.backward(store, g);
  }

 private:
  Conv1d<Real> conv1_, conv2_;
  Linear<Real> proj_;
  Relu<Real> act1_, act2_;
  Matrix<Real> raw_;
};

// ---------------------------------------------------------------------------

/// The noise-prediction decoder. Resampled frames climb the upsampling stack
/// to waveform resolution while the noisy waveform descends the downsampling
/// stack; FiLM couples the two branches at matching temporal resolutions,
/// pairing each upsampling block's output with the downsampling feature of
/// equal rate (the pre-stack input convolution feeds the final block).
template <typename Real>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore<Real>& store, const ModelConfig& cfg, Rng& init)
      : samples_per_frame_(cfg.samples_per_frame),
        noise_dim_(cfg.noise_embedding_dim),
        frame_conv_(store, "decoder.frame_conv", cfg.encoder_out_dim(), cfg.frame_conv_channels,
                    3, init),
        wave_conv_(store, "decoder.wave_conv", 1, cfg.wave_conv_channels, 5, init) {
    const std::size_t k = cfg.ublock_factors.size();
    std::size_t in = cfg.frame_conv_channels;
    ublocks_.reserve(k);
    films_.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      ublocks_.emplace_back(store, "decoder.ublock" + std::to_string(i + 1), in,
                            cfg.ublock_channels[i], cfg.ublock_factors[i], init);
      in = cfg.ublock_channels[i];
    }
    std::size_t din = cfg.wave_conv_channels;
    dblocks_.reserve(k - 1);
    for (std::size_t j = 0; j < k - 1; ++j) {
      // Downsampling factors mirror the upsampling tail in reverse.
      const std::size_t f = cfg.ublock_factors[k - 1 - j];
      dblocks_.emplace_back(store, "decoder.dblock" + std::to_string(j + 1), din,
                            cfg.dblock_channels[j], f, init);
      din = cfg.dblock_channels[j];
    }
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t feat_ch =
          i + 1 == k ? cfg.wave_conv_channels : cfg.dblock_channels[k - 2 - i];
      films_.emplace_back(store, "decoder.film" + std::to_string(i + 1), feat_ch,
                          cfg.ublock_channels[i], cfg.noise_embedding_dim, init);
    }
    final_conv_ = Conv1d<Real>(store, "decoder.final_conv", cfg.ublock_channels.back(), 1, 3,
                               init);
  }

  /// frames: resampled conditioning (frame rate); y_noisy: waveform-rate
  /// noisy signal. Returns the predicted noise at waveform length.
  std::vector<Real> forward(const ParamStore<Real>& store, std::span<const Real> y_noisy,
                            const Matrix<Real>& frames, Real sqrt_alpha_bar) {
    const std::size_t k = ublocks_.size();
    require(y_noisy.size() == frames.rows * samples_per_frame_,
            "eps_theta: waveform length must equal frames * samples_per_frame");

    noise_emb_ = noise_embedding<Real>(sqrt_alpha_bar, noise_dim_);

    Matrix<Real> y(y_noisy.size(), 1);
    std::copy(y_noisy.begin(), y_noisy.end(), y.data.begin());
    dfeats_.assign(k, Matrix<Real>());
    Matrix<Real> d = wave_conv_.forward(store, y);
    dfeats_[k - 1] = d;  // feeds the last upsampling block's FiLM
    for (std::size_t j = 0; j < k - 1; ++j) {
      d = dblocks_[j].forward(store, d);
      dfeats_[k - 2 - j] = d;  // dblock j output modulates ublock k-1-j
    }

    Matrix<Real> u = frame_conv_.forward(store, frames);
    film_signals_.assign(k, FilmSignal<Real>{});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t expect = u.rows * ublocks_[i].factor();
      if (dfeats_[i].rows != expect)
        throw std::invalid_argument(
            "eps_theta: resolution mismatch at ublock" + std::to_string(i + 1) + " film: have " +
            std::to_string(dfeats_[i].rows) + " rows, need " + std::to_string(expect));
      film_signals_[i] = films_[i].forward(store, dfeats_[i], noise_emb_);
      u = ublocks_[i].forward(store, u, &film_signals_[i]);
    }
    const Matrix<Real> out = final_conv_.forward(store, u);
    return out.data;
  }

  struct BackwardResult {
    Matrix<Real> grad_frames;
    std::vector<Real> grad_y;
  };

  BackwardResult backward(ParamStore<Real>& store, std::span<const Real> grad_eps) {
    const std::size_t k = ublocks_.size();
    Matrix<Real> g(grad_eps.size(), 1);
    std::copy(grad_eps.begin(), grad_eps.end(), g.data.begin());
    Matrix<Real> du = final_conv_.backward(store, g);

    std::vector<Matrix<Real>> dfeat_grads(k);
    for (std::size_t i = k; i-- > 0;) {
      FilmSignal<Real> gf;
      du = ublocks_[i].backward(store, du, &gf);
      dfeat_grads[i] = films_[i].backward(store, gf);
    }
    BackwardResult res;
    res.grad_frames = frame_conv_.backward(store, du);

    // Downsampling branch: accumulate FiLM feature gradients from the deepest
    // dblock back to the wave conv.
    Matrix<Real> dd = dfeat_grads[0];  // gradient at dblock_{k-1} output
    for (std::size_t j = k - 1; j-- > 0;) {
      dd = dblocks_[j].backward(store, dd);
      Matrix<Real>& extra = dfeat_grads[k - 1 - j];
      for (std::size_t i = 0; i < dd.data.size(); ++i) dd.data[i] += extra.data[i];
    }
    const Matrix<Real> dy = wave_conv_.backward(store, dd);
    res.grad_y = dy.data;
    return res;
  }

 private:
  std::size_t samples_per_frame_ = 1;
  std::size_t noise_dim_ = 2;
  Conv1d<Real> frame_conv_, wave_conv_, final_conv_;
  std::vector<UpBlock<Real>> ublocks_;
  std::vector<DownBlock<Real>> dblocks_;
  std::vector<FilmGenerator<Real>> films_;
  std::vector<Real> noise_emb_;
  std::vector<Matrix<Real>> dfeats_;
  std::vector<FilmSignal<Real>> film_signals_;
};

// ---------------------------------------------------------------------------

/// Training-only auxiliary head: one factor-1 upsampling block (the frame
/// rate already matches the mel rate) plus a projection to mel bins. Dropped
/// at inference.
template <typename Real>
class MelHead {
 public:
  MelHead() = default;
  MelHead(ParamStore<Real>& store, const ModelConfig& cfg, Rng& init)
      : block_(store, "mel_head.block", cfg.encoder_out_dim(), cfg.mel_head_channels, 1, init),
        proj_(store, "mel_head.proj", cfg.mel_head_channels, cfg.mel_bins, init) {}

  Matrix<Real> forward(const ParamStore<Real>& store, const Matrix<Real>& frames) {
    const Matrix<Real> h = block_.forward(store, frames, nullptr);
    return proj_.forward(store, h);
  }

  Matrix<Real> backward(ParamStore<Real>& store, const Matrix<Real>& grad_out) {
    const Matrix<Real> gh = proj_.backward(store, grad_out);
    return block_.backward(store, gh, nullptr);
  }

 private:
  UpBlock<Real> block_;
  Linear<Real> proj_;
};

template <typename Real>
Real mel_loss(const Matrix<Real>& pred, const Matrix<Real>& target) {
  require(pred.rows == target.rows && pred.cols == target.cols,
          "mel_loss: mismatched mel frame counts");
  require(pred.rows > 0, "mel_loss: empty prediction");
  Real acc = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const Real d = pred.data[i] - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<Real>(pred.data.size());
}

// ---------------------------------------------------------------------------

template <typename Real>
struct ExampleLosses {
  Real eps = 0, dur = 0, mel = 0, total = 0;
  double sqrt_alpha_bar = 0;
};

template <typename Real>
struct SynthesisResult {
  std::vector<Real> waveform;
  std::vector<Real> durations;
  std::size_t total_frames = 0;
};

/// The full trainable pipeline: encoder, duration/range predictor, Gaussian
/// resampler, block masking, noise-prediction decoder and the optional mel
/// head. Owns the parameter store; copying a model snapshots everything.
template <typename Real>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng init(derive_seed(init_seed, 0x496e6974ull));  // independent init stream
    encoder_ = Encoder<Real>(params_, cfg_, init);
    duration_ = DurationPredictor<Real>(params_, cfg_, init);
    decoder_ = Decoder<Real>(params_, cfg_, init);
    if (cfg_.multitask) mel_head_.emplace(params_, cfg_, init);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }

  Matrix<Real> encode(const std::vector<int>& tokens, Mode mode, Rng& rng) {
    return encoder_.forward(params_, tokens, mode, rng);
  }

  typename DurationPredictor<Real>::Output predict_durations(const Matrix<Real>& hiddens) {
    return duration_.forward(params_, hiddens);
  }

  std::vector<Real> eps_theta(std::span<const Real> y_noisy, const Matrix<Real>& frames,
                              Real sqrt_alpha_bar) {
    return decoder_.forward(params_, y_noisy, frames, sqrt_alpha_bar);
  }

  typename Decoder<Real>::BackwardResult eps_theta_backward(std::span<const Real> grad_eps) {
    return decoder_.backward(params_, grad_eps);
  }

  Matrix<Real> mel_head_forward(const Matrix<Real>& frames) {
    require(mel_head_.has_value(), "mel head: multitask flag disabled");
    return mel_head_->forward(params_, frames);
  }

  /// One utterance of the training objective: forward losses, backward
  /// gradients accumulated into the store. Teacher durations drive the
  /// resampler; the predictor trains through the duration loss while its
  /// ranges train through the synthesis loss.
  ExampleLosses<Real> train_example(const std::vector<int>& tokens,
                                    const std::vector<Real>& true_durations,
                                    std::span<const Real> waveform,
                                    const Matrix<Real>* mel_target, const NoiseSchedule& schedule,
                                    Rng& rng, Real lambda_dur, Real lambda_mel) {
    require(tokens.size() == true_durations.size(),
            "train_example: tokens/durations count mismatch");
    const std::size_t spf = cfg_.samples_per_frame;

    Matrix<Real> hiddens = encoder_.forward(params_, tokens, Mode::Train, rng);
    auto dp = duration_.forward(params_, hiddens);

    const Alignment<Real> align(true_durations, dp.ranges);
    const std::size_t total = total_frames_of<Real>(true_durations);
    require(waveform.size() == total * spf,
            "train_example: waveform length inconsistent with durations");
    Matrix<Real> frames = gaussian_upsample(hiddens, align, total);

    std::vector<unsigned char> kept;
    if (cfg_.mask_enabled && cfg_.mask_count > 0) {
      auto masked = mask_blocks(frames, rng, cfg_.mask_block_len, cfg_.mask_count);
      frames = std::move(masked.frames);
      kept = std::move(masked.kept);
    }

    const Window<Real> win = sample_window<Real>(frames, waveform, cfg_.window_frames, spf, rng);

    const double sqrt_ab = sample_noise_level(schedule, rng);
    std::vector<Real> eps(win.waveform.size());
    rng.fill_normal<Real>(eps);
    const std::vector<Real> y_noisy =
        forward_diffuse<Real>(win.waveform, static_cast<Real>(sqrt_ab), eps);

    const std::vector<Real> eps_pred =
        decoder_.forward(params_, y_noisy, win.frames, static_cast<Real>(sqrt_ab));

    ExampleLosses<Real> losses;
    losses.sqrt_alpha_bar = sqrt_ab;
    losses.eps = epsilon_loss<Real>(eps_pred, eps);
    losses.dur = duration_loss<Real>(dp.durations, true_durations);

    Matrix<Real> mel_pred;
    if (cfg_.multitask && mel_target != nullptr) {
      require(mel_target->rows <= frames.rows && mel_target->cols == cfg_.mel_bins,
              "train_example: mel target shape incompatible with frame count");
      Matrix<Real> full = mel_head_->forward(params_, frames);
      mel_pred = Matrix<Real>(mel_target->rows, cfg_.mel_bins);
      for (std::size_t t = 0; t < mel_pred.rows; ++t)
        std::copy(full.row(t), full.row(t) + cfg_.mel_bins, mel_pred.row(t));
      losses.mel = mel_loss(mel_pred, *mel_target);
    }
    losses.total = losses.eps + lambda_dur * losses.dur + lambda_mel * losses.mel;

    // ---- backward ----
    const std::size_t n_wave = eps_pred.size();
    std::vector<Real> d_eps(n_wave);
    for (std::size_t i = 0; i < n_wave; ++i) {
      const Real d = eps_pred[i] - eps[i];
      d_eps[i] = (d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0))) /
                 static_cast<Real>(n_wave);
    }
    auto dec_grads = decoder_.backward(params_, d_eps);

    Matrix<Real> d_frames(total, frames.cols);
    for (std::size_t t = 0; t < win.spec.length_frames; ++t) {
      const Real* src = dec_grads.grad_frames.row(t);
      Real* dst = d_frames.row(win.spec.start_frame + t);
      for (std::size_t c = 0; c < frames.cols; ++c) dst[c] += src[c];
    }

    if (cfg_.multitask && mel_target != nullptr && lambda_mel != Real(0)) {
      Matrix<Real> d_mel(mel_pred.rows, mel_pred.cols);
      const Real scale = lambda_mel * Real(2) / static_cast<Real>(mel_pred.data.size());
      for (std::size_t i = 0; i < d_mel.data.size(); ++i)
        d_mel.data[i] = scale * (mel_pred.data[i] - mel_target->data[i]);
      Matrix<Real> d_full(frames.rows, cfg_.mel_bins);
      for (std::size_t t = 0; t < d_mel.rows; ++t)
        std::copy(d_mel.row(t), d_mel.row(t) + cfg_.mel_bins, d_full.row(t));
      const Matrix<Real> d_from_mel = mel_head_->backward(params_, d_full);
      for (std::size_t i = 0; i < d_frames.data.size(); ++i)
        d_frames.data[i] += d_from_mel.data[i];
    }

    if (!kept.empty())
      for (std::size_t t = 0; t < d_frames.rows; ++t)
        if (!kept[t]) std::fill(d_frames.row(t), d_frames.row(t) + d_frames.cols, Real(0));

    Matrix<Real> d_hiddens(hiddens.rows, hiddens.cols);
    std::vector<Real> d_dur_unused(tokens.size(), Real(0));
    std::vector<Real> d_ranges(tokens.size(), Real(0));
    gaussian_upsample_backward(hiddens, align, d_frames, d_hiddens,
                               std::span<Real>(d_dur_unused), std::span<Real>(d_ranges));
    // Teacher durations are constants; their upsampling gradient is dropped.

    std::vector<Real> d_durations(tokens.size(), Real(0));
    if (lambda_dur != Real(0)) {
      const Real scale = lambda_dur * Real(2) / static_cast<Real>(tokens.size());
      for (std::size_t t = 0; t < tokens.size(); ++t)
        d_durations[t] = scale * (dp.durations[t] - true_durations[t]);
    }
    const Matrix<Real> d_hiddens_dp = duration_.backward(params_, d_durations, d_ranges);
    for (std::size_t i = 0; i < d_hiddens.data.size(); ++i)
      d_hiddens.data[i] += d_hiddens_dp.data[i];

    encoder_.backward(params_, d_hiddens);
    return losses;
  }

  /// Full-sequence synthesis. Predicted durations drive the resampler unless
  /// teacher durations are supplied; ranges are always predicted.
  SynthesisResult<Real> synthesize(const std::vector<int>& tokens,
                                   const NoiseSchedule& schedule, Rng& rng,
                                   const std::vector<Real>* teacher_durations = nullptr) {
    Rng enc_rng(0);  // eval mode consumes no randomness
    Matrix<Real> hiddens = encoder_.forward(params_, tokens, Mode::Eval, enc_rng);
    auto dp = duration_.forward(params_, hiddens);
    SynthesisResult<Real> out;
    out.durations = teacher_durations ? *teacher_durations : dp.durations;
    out.total_frames = total_frames_of<Real>(out.durations);
    const Alignment<Real> align(out.durations, dp.ranges);
    const Matrix<Real> frames = gaussian_upsample(hiddens, align, out.total_frames);
    out.waveform = sample<Real>(
        [this](std::span<const Real> y, const Matrix<Real>& x, Real sab) {
          return decoder_.forward(params_, y, x, sab);
        },
        frames, cfg_.samples_per_frame, schedule, rng);
    return out;
  }

  void encoder_backward(const Matrix<Real>& grad_hiddens) {
    encoder_.backward(params_, grad_hiddens);
  }
  Matrix<Real> duration_backward(std::span<const Real> gd, std::span<const Real> gr) {
    return duration_.backward(params_, gd, gr);
  }

 private:
  ModelConfig cfg_;
  ParamStore<Real> params_;
  Encoder<Real> encoder_;
  DurationPredictor<Real> duration_;
  Decoder<Real> decoder_;
  std::optional<MelHead<Real>> mel_head_;
};

}  // namespace diffsynth
