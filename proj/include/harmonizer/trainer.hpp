#pragma once

#include "harmonizer/backbone.hpp"
#include "harmonizer/checkpoint.hpp"
#include "harmonizer/datagen.hpp"
#include "harmonizer/features.hpp"
#include "harmonizer/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace harmonizer {

struct TrainConfig {
  long pretrain_steps = 2000;
  long temporal_steps = 1000;
  int batch_size = 2;           // image samples per non-temporal batch
  int temporal_batch_size = 1;  // clips per temporal batch
  double temporal_batch_fraction = 0.5;
  /// Phase 2 alternates temporal / non-temporal instead of drawing Bernoulli.
  bool strict_alternation = false;
  double learning_rate = 1e-3;
  /// Linear warm-up length in updates (0 disables warm-up).
  long lr_warmup_steps = 0;
  /// Cosine decay over all updates down to lr_final_fraction * learning_rate.
  bool lr_cosine_decay = false;
  double lr_final_fraction = 0.05;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 7;
  std::uint64_t init_seed = 11;
  /// Frames per temporal sample used in the unroll; 0 means K + 1.
  int clip_length = 0;
  long checkpoint_interval = 0;  // 0 disables intermediate checkpoints
  /// Stop gradients at the context latents (ablation).
  bool detach_context = false;
  /// Train and evaluate without temporal context (ablation).
  bool disable_context = false;
  LossWeights loss;
  BackboneConfig model;

  void validate() const;
  /// Learning rate applied by the update that follows `step` completed ones.
  double learning_rate_at(long step) const;
  int effective_clip_length() const { return clip_length > 0 ? clip_length : model.context_K + 1; }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses "key = value" lines ('#' starts a comment). Every TrainConfig,
/// LossWeights and BackboneConfig field has a key; unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
/// Inverse of parse_train_config.
std::string format_train_config(const TrainConfig& c);

struct StepRecord {
  long step = 0;  // 1-based index of the update just applied
  Phase phase = Phase::pretrain;
  bool temporal = false;
  LossBreakdown loss;
  double seconds = 0.0;
};

struct TrainHooks {
  /// Context latents passed to the backbone for frame `t` of sample `s`.
  std::function<void(int s, int t, const std::vector<Mat>& context)> on_context;
  /// Unclamped prediction of frame `t` of sample `s`.
  std::function<void(int s, int t, const Image& prediction)> on_prediction;
  PatchHook on_patch;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const FeatureExtractor& features() const { return features_; }

  TrainState init_state() const;

  /// One optimizer update on a batch whose samples share one temporal flag.
  StepRecord train_step(TrainState& state, const std::vector<PairedSample>& batch, const TrainHooks& hooks = {}) const;

 private:
  TrainConfig config_;
  Backbone backbone_;
  ConvFeatureExtractor features_;
};

struct RunOptions {
  /// Resume from this training-state checkpoint.
  std::optional<std::filesystem::path> resume;
  /// Stop once this many total updates have been applied.
  std::optional<long> stop_at_step;
  std::function<void(const StepRecord&)> on_step;
  bool write_log = true;
};

struct RunResult {
  TrainState state;
  std::vector<StepRecord> log;
};

/// Two-phase training over a dataset manifest. Writes `train_log.jsonl`,
/// `final.ckpt` (training state) and `model.ckpt` (parameters only) to
/// `out_dir`, plus `step_NNNNNN.ckpt` every checkpoint_interval updates.
RunResult run_training(const TrainConfig& config, const Manifest& manifest, const std::filesystem::path& out_dir,
                       const RunOptions& options = {});

Checkpoint make_model_checkpoint(const TrainConfig& config, const ModelParams& params);
Checkpoint make_train_checkpoint(const TrainConfig& config, const TrainState& state);

}  // namespace harmonizer
