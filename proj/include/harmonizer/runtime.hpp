#pragma once

#include "harmonizer/backbone.hpp"
#include "harmonizer/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

namespace harmonizer {

class ConfigMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SessionOptions {
  /// Expected context depth; must equal the checkpoint's K when given.
  std::optional<int> context_K;
  /// Overrides the checkpoint's context flag (true = per-frame independent).
  std::optional<bool> disable_context;
  /// Keep the backbone's output latents in the history instead of
  /// re-encoding the decoded, clamped frames (ablation).
  bool store_predecode_latents = false;
};

/// Read-only model shared by any number of sessions.
struct LoadedModel {
  Backbone backbone;
  ModelParams params;
  bool disable_context = false;

  explicit LoadedModel(const Checkpoint& c);
};

struct LatencyReport {
  std::vector<double> per_frame_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;  // nearest-rank

  static LatencyReport from_samples(std::vector<double> per_frame_ms);
  nlohmann::json to_json() const;
};

/// Online enhancer: one backbone evaluation per pushed frame, conditioned on
/// the latents of this session's own previous outputs (most recent first).
class StreamSession {
 public:
  StreamSession(std::shared_ptr<const LoadedModel> model, SessionOptions options);

  Frame push_frame(const Frame& frame);
  /// Clears the history; the next frame is a cold start.
  void reset();

  const TemporalContext& history() const { return history_; }
  long frame_index() const { return frame_index_; }
  bool context_enabled() const { return !disable_context_; }
  int context_K() const { return model_->backbone.config().context_K; }

  // Instrumentation.
  std::size_t max_history_seen() const { return max_history_; }
  std::uint64_t backbone_evaluations() const { return evaluations_; }
  LatencyReport latency() const { return LatencyReport::from_samples(latency_ms_); }

 private:
  std::shared_ptr<const LoadedModel> model_;
  SessionOptions options_;
  bool disable_context_ = false;
  TemporalContext history_;
  long frame_index_ = 0;
  std::size_t max_history_ = 0;
  std::uint64_t evaluations_ = 0;
  std::vector<double> latency_ms_;
};

/// Loads and validates a model from a checkpoint file or object.
StreamSession open_session(const std::filesystem::path& checkpoint, const SessionOptions& options = {});
StreamSession open_session(const Checkpoint& checkpoint, const SessionOptions& options = {});

struct ClipResult {
  std::vector<Frame> frames;
  LatencyReport report;
};

/// Runs a fresh session over `clip`.
ClipResult enhance_clip(const Checkpoint& checkpoint, const std::vector<Frame>& clip, const SessionOptions& options = {});
ClipResult enhance_clip(StreamSession& fresh_session, const std::vector<Frame>& clip);

}  // namespace harmonizer
