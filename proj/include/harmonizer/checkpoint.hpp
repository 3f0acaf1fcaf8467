#pragma once

#include "harmonizer/backbone.hpp"
#include "harmonizer/bytes.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace harmonizer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Phase { pretrain, mixed };
std::string phase_name(Phase p);
Phase parse_phase(const std::string& s);

/// First and second moments of the adaptive optimizer, one per parameter
/// tensor in ModelParams order.
struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long t = 0;
  bool operator==(const AdamState& o) const;
};

struct TrainState {
  long step = 0;
  ModelParams params;
  AdamState optimizer;
  std::string rng_state;
  Phase phase = Phase::pretrain;
  bool operator==(const TrainState& o) const;
};

enum class CheckpointKind { model, train_state };

/// Checkpoint container. Byte layout (all integers u32 little-endian):
///   "HMCK" | version | header length | header JSON (UTF-8)
///   | tensor count | per tensor: name length, name, rows, cols, rows*cols f32
///   | CRC-32 (zlib polynomial) of every preceding byte
/// Tensors are the model parameters in creation order, followed for training
/// states by "adam.m/<name>" and "adam.v/<name>" for every parameter.
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::model;
  BackboneConfig config;
  TrainState state;  // for model checkpoints only `params` is meaningful
  /// Free-form settings carried along (training config, inference flags).
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json backbone_config_to_json(const BackboneConfig& c);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Rounds every entry to the nearest single-precision value.
void round_to_f32(Mat& m);
void round_to_f32(ModelParams& p);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
/// Throws FormatError on any corruption, truncation, version or shape
/// mismatch; never returns a partially decoded checkpoint.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace harmonizer
