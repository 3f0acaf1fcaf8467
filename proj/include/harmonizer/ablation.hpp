#pragma once

#include "harmonizer/metrics.hpp"
#include "harmonizer/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace harmonizer {

enum class TemporalVariant { full, no_temporal_loss, no_temporal_modules };
std::string variant_name(TemporalVariant v);

/// Training configuration of a variant derived from `base`: the temporal
/// loss is dropped for both ablations; the modules ablation additionally
/// trains and runs without any temporal context.
TrainConfig variant_config(const TrainConfig& base, TemporalVariant v);

struct VariantResult {
  std::string name;
  TrainConfig config;
  std::filesystem::path checkpoint;
  EvalReport report;
  double flicker = 0.0;  // aggregate output flicker on held-out clips
};

struct TemporalAblation {
  std::vector<VariantResult> variants;  // full, no_temporal_loss, no_temporal_modules
  bool ordered = false;                 // full >= no-loss >= no-modules
  double margin = 0.0;                  // full - no-modules
  nlohmann::json to_json() const;
};

using ProgressFn = std::function<void(const std::string& stage, const StepRecord&)>;

/// Pretrains once, then runs the mixed phase for each variant from the
/// shared pretraining state and scores held-out clips.
TemporalAblation run_temporal_ablation(const TrainConfig& base, const Manifest& train, const Manifest& holdout,
                                       const std::filesystem::path& out_dir, const ProgressFn& progress = {});

struct PatchAblation {
  double single_scale_hf = 0.0;
  double multi_scale_hf = 0.0;
  double single_scale_psnr = 0.0;
  double multi_scale_psnr = 0.0;
  nlohmann::json to_json() const;
};

/// Trains a single fixed-size-patch perceptual variant and the multi-scale
/// variant for `steps` image-only updates each and reports the mean
/// high-frequency residual energy on held-out images.
PatchAblation run_patch_ablation(const TrainConfig& base, long steps, const Manifest& train, const Manifest& holdout,
                                 const std::filesystem::path& out_dir, const ProgressFn& progress = {});

}  // namespace harmonizer
