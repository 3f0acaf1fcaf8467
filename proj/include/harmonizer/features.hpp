#pragma once

#include "harmonizer/autograd.hpp"

#include <cstdint>
#include <vector>

namespace harmonizer {

struct FeatureMap {
  ag::Var values;  // (h*w) x channels
  int height = 0;
  int width = 0;
};

/// Frozen multi-stage feature network phi_l used by the perceptual loss and
/// the perceptual/structural metrics.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// `pixels` is (H*W) x 3. Returns one map per stage, shallowest first.
  virtual std::vector<FeatureMap> extract(ag::Var pixels, int height, int width) const = 0;
  virtual int stage_count() const = 0;
  /// Smallest input side accepted.
  virtual int min_input_size() const = 0;
};

struct ConvStage {
  int kernel = 3;
  int stride = 1;
  int in_channels = 3;
  int out_channels = 8;
  bool relu = true;
  Mat weight;  // (kernel*kernel*in_channels) x out_channels
  Mat bias;    // 1 x out_channels
};

/// Strided convolutional extractor. The default construction is three 3x3
/// stages at cumulative strides 1, 2 and 4 with He-normal weights drawn from
/// `seed`. Inputs are shifted by -0.5 before the first stage.
class ConvFeatureExtractor final : public FeatureExtractor {
 public:
  explicit ConvFeatureExtractor(std::uint64_t seed = 0xfea7);
  explicit ConvFeatureExtractor(std::vector<ConvStage> stages, double input_shift = 0.0);

  std::vector<FeatureMap> extract(ag::Var pixels, int height, int width) const override;
  int stage_count() const override { return static_cast<int>(stages_.size()); }
  int min_input_size() const override;
  const std::vector<ConvStage>& stages() const { return stages_; }

 private:
  std::vector<ConvStage> stages_;
  double input_shift_ = 0.0;
};

/// Zero-padded 2-D convolution via im2col. `x` is (H*W) x Cin.
FeatureMap conv2d(ag::Var x, int height, int width, const ConvStage& stage);

}  // namespace harmonizer
