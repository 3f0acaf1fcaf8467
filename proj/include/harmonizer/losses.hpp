#pragma once

#include "harmonizer/autograd.hpp"
#include "harmonizer/features.hpp"
#include "harmonizer/flow.hpp"
#include "harmonizer/rng.hpp"
#include "harmonizer/tensor.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace harmonizer {

struct LossWeights {
  double lambda_l2 = 1.0;
  double lambda_perc = 1.0;
  double lambda_temp = 1.0;  // applied only to temporal batches
  int patch_min = 16;
  int patch_max = 64;
  /// Per-stage weights lambda_l; empty means uniform 1/L.
  std::vector<double> layer_weights;
  int patches_per_step = 4;
  /// Divide each stage's squared distance by its element count.
  bool normalize_features = true;

  /// Throws InvalidArgument when the weights or patch range are unusable for
  /// frames of the given size.
  void validate(int height, int width) const;
  std::vector<double> stage_weights(int stages) const;
};

/// Paper-scale values for production resolution (1024x576).
LossWeights paper_loss_weights();

struct PatchSample {
  int size = 0;
  int y = 0;
  int x = 0;
  bool operator==(const PatchSample&) const = default;
};

/// Called once per patch with the coordinates applied to the prediction and
/// to the target.
using PatchHook = std::function<void(const PatchSample& pred, const PatchSample& target)>;

/// Draws `patches_per_step` squares: side uniform in [patch_min, patch_max],
/// corner uniform over valid positions.
std::vector<PatchSample> sample_patches(const LossWeights& w, int height, int width, Rng& rng);

/// Mean squared error over all pixels and channels.
ag::Var loss_l2(ag::Var pred, ag::Var target);
double loss_l2(const Image& pred, const Image& target);

/// Multi-scale random-patch perceptual loss; pred and target share each
/// patch location.
ag::Var loss_perceptual(ag::Var pred, ag::Var target, int height, int width, const FeatureExtractor& fx,
                        const LossWeights& w, Rng& rng, const PatchHook& hook = {});
double loss_perceptual(const Image& pred, const Image& target, const FeatureExtractor& fx, const LossWeights& w,
                       Rng& rng);

/// Squared difference between pred_t and pred_tm1 warped by `flow`, averaged
/// over valid pixels and channels. Zero when no pixel is valid.
ag::Var loss_temporal(ag::Var pred_t, ag::Var pred_tm1, int height, int width, const FlowField& flow,
                      const ValidityMask& valid);
double loss_temporal(const Image& pred_t, const Image& pred_tm1, const FlowField& flow, const ValidityMask& valid);

struct TemporalInputs {
  ag::Var pred_tm1;
  const FlowField* flow = nullptr;
  const ValidityMask* valid = nullptr;
};

struct LossBreakdown {
  double l2 = 0.0;
  double perc = 0.0;
  double temp = 0.0;
  double total = 0.0;
};

struct LossResult {
  ag::Var total;
  LossBreakdown breakdown;
};

class LossContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// lambda_l2 * L2 + lambda_perc * perceptual + lambda_temp * temporal. Without
/// temporal inputs, a non-zero lambda_temp is a contract violation.
LossResult loss_total(ag::Var pred, ag::Var target, int height, int width, const std::optional<TemporalInputs>& temporal,
                      const LossWeights& w, const FeatureExtractor& fx, Rng& rng, const PatchHook& hook = {});

}  // namespace harmonizer
