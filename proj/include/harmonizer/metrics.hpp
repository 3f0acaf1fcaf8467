#pragma once

#include "harmonizer/checkpoint.hpp"
#include "harmonizer/datagen.hpp"
#include "harmonizer/features.hpp"
#include "harmonizer/flow.hpp"
#include "harmonizer/runtime.hpp"
#include "harmonizer/tensor.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace harmonizer {

/// PSNR returned when the two images are identical.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over the pixels where `region` is non-zero (all pixels
/// when null), for unit dynamic range.
double psnr(const Frame& pred, const Frame& ref, const Mask* region = nullptr);

/// Structural similarity with an 11-tap Gaussian window (sigma 1.5),
/// C1 = 0.01^2 and C2 = 0.03^2, evaluated at every fully interior window and
/// averaged over channels. The map is (H-10) x (W-10), one value per window.
Image ssim_map(const Frame& pred, const Frame& ref);
/// Mean of the map over windows whose centre lies in `region`.
double ssim(const Frame& pred, const Frame& ref, const Mask* region = nullptr);

/// Sum over stages of (1/L) * squared feature distance / feature count.
double perceptual_distance(const Frame& a, const Frame& b, const FeatureExtractor& fx);

/// 1 - mean over locations of the cosine similarity between deepest-stage
/// feature vectors. Two zero vectors count as identical, one as orthogonal.
double struct_distance(const Frame& input, const Frame& output, const FeatureExtractor& fx);
double cosine_similarity(const Eigen::Ref<const RowVec>& a, const Eigen::Ref<const RowVec>& b);

/// 1 - mean over consecutive pairs of the mean absolute difference between
/// frame t and warp(frame t-1, flows[t-1]) on pixels that are valid both in
/// `validity` and for the warp. Pairs without valid pixels are skipped; a
/// clip with no usable pair scores 1.
double flicker_score(const std::vector<Frame>& clip, const std::vector<FlowField>& flows,
                     const std::vector<ValidityMask>& validity);

/// Residual energy in the highest-frequency quarter of the 2-D spectrum
/// (bins ranked by radial frequency): the sum over those bins and all
/// channels of |DFT|^2 / ((H * W)^2 * C). Over all bins this equals the mean
/// squared residual.
double high_frequency_energy(const Image& residual);

struct ClipMetrics {
  std::string id;
  Stream stream = Stream::artifact;
  int frames = 0;
  double psnr_input = 0.0;   // input vs target
  double psnr_output = 0.0;  // enhanced vs target
  std::optional<double> roi_psnr_input;
  std::optional<double> roi_psnr_output;
  double ssim_output = 0.0;
  double perceptual_output = 0.0;
  double struct_distance = 0.0;  // input vs enhanced
  std::optional<double> flicker_input;
  std::optional<double> flicker_output;

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  /// Sorted by clip id.
  std::vector<ClipMetrics> clips;
  /// Unweighted mean of the per-clip values over the clips that have them.
  std::map<std::string, double> aggregate;

  nlohmann::json to_json() const;
};

struct EvalOptions {
  SessionOptions session;
  /// Restrict to one stream.
  std::optional<Stream> stream;
  /// Restrict to clips (true) or images (false).
  std::optional<bool> temporal;
  std::string model_id = "model";
  std::string dataset_id = "dataset";
};

/// Streams every selected sample through a fresh session and scores it
/// against its target. Throws InvalidArgument when nothing is selected.
EvalReport evaluate(const Checkpoint& checkpoint, const Manifest& manifest, const EvalOptions& options = {});

/// Aggregates per-clip metrics (order independent).
std::map<std::string, double> aggregate_metrics(std::vector<ClipMetrics> clips);

}  // namespace harmonizer
