#pragma once

#include "harmonizer/autograd.hpp"
#include "harmonizer/codec.hpp"
#include "harmonizer/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace harmonizer {

struct BackboneConfig {
  int channels = 64;      // hidden width D
  int num_blocks = 2;
  int num_heads = 4;
  int ff_hidden = 128;    // feed-forward width
  int context_K = 4;      // previously enhanced frames attended to
  int frame_height = 64;  // learned positional table is sized for this grid
  int frame_width = 64;
  CodecConfig codec{.patch = 4};

  /// Throws InvalidArgument on an inconsistent configuration.
  void validate() const;
  int token_rows() const { return frame_height / codec.patch; }
  int token_cols() const { return frame_width / codec.patch; }
  bool operator==(const BackboneConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Mat value;
};

/// Trainable parameters of the enhancer, in a fixed creation order.
struct ModelParams {
  std::vector<NamedTensor> tensors;
  int version = 1;

  const Mat& at(const std::string& name) const;
  Mat& at(const std::string& name);
  bool contains(const std::string& name) const;
  std::size_t scalar_count() const;
  bool all_finite() const;
  bool operator==(const ModelParams& o) const;
};

/// Previously enhanced latents, most recent first.
struct TemporalContext {
  std::vector<LatentGrid> entries;
  std::vector<long> timestamps;  // strictly decreasing frame indices

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

class ContextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters placed on a tape, addressable by name.
class ParamBinding {
 public:
  ParamBinding(ag::Tape& tape, const ModelParams& params, bool requires_grad);
  ag::Var operator[](const std::string& name) const;
  /// Bound variables in ModelParams order.
  const std::vector<ag::Var>& vars() const { return vars_; }
  ag::Tape& tape() const { return *tape_; }

 private:
  ag::Tape* tape_;
  std::vector<ag::Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

ModelParams init_params(const BackboneConfig& config, std::uint64_t seed);

/// Spatial/temporal attention transformer used as a deterministic
/// single-step enhancer. There is no timestep or text input.
class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  const Codec& codec() const { return codec_; }

  /// Graph form. `context` holds latents of previously enhanced frames, most
  /// recent first; at most context_K entries.
  ag::Var forward(const ParamBinding& params, ag::Var current, std::span<const ag::Var> context) const;

  LatentGrid forward(const LatentGrid& current, const TemporalContext& context, const ModelParams& params) const;

  /// decode(forward(encode(frame))) clamped to [0, 1].
  Frame enhance_frame(const Frame& frame, const TemporalContext& context, const ModelParams& params) const;
  /// Same, without the final clamp.
  Image enhance_frame_unclamped(const Frame& frame, const TemporalContext& context, const ModelParams& params) const;

  void check_params(const ModelParams& params) const;

 private:
  void check_latent(const LatentGrid& z) const;

  BackboneConfig config_;
  Codec codec_;
};

}  // namespace harmonizer
