#pragma once

#include "harmonizer/autograd.hpp"
#include "harmonizer/tensor.hpp"

#include <cstdint>

namespace harmonizer {

struct CodecConfig {
  int patch = 2;
  std::uint64_t mixing_seed = 0x5eed;
  bool operator==(const CodecConfig&) const = default;
};

/// Frozen latent codec: space-to-depth patchification by `patch` followed by
/// a fixed orthogonal channel mix drawn from `mixing_seed`. Lossless, linear,
/// and norm preserving. Immutable after construction.
class Codec {
 public:
  explicit Codec(CodecConfig config = {});

  const CodecConfig& config() const { return config_; }
  int patch() const { return config_.patch; }
  int latent_channels() const { return 3 * config_.patch * config_.patch; }
  const Mat& mixing() const { return mixing_; }

  LatentGrid encode(const Image& frame) const;
  /// Unclamped inverse of encode.
  Image decode(const LatentGrid& latent) const;

  /// Differentiable versions. `pixels` is (H*W) x 3; result is (h*w) x c.
  ag::Var encode(ag::Var pixels, int height, int width) const;
  ag::Var decode(ag::Var latent, int height, int width) const;

 private:
  void check_frame_dims(int height, int width) const;
  std::vector<int> space_to_depth_index(int height, int width) const;
  std::vector<int> depth_to_space_index(int height, int width) const;

  CodecConfig config_;
  Mat mixing_;  // c x c orthogonal
};

}  // namespace harmonizer
