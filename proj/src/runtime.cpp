#include "harmonizer/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace harmonizer {

LoadedModel::LoadedModel(const Checkpoint& c)
    : backbone(c.config), params(c.state.params), disable_context(c.extra.value("disable_context", false)) {
  backbone.check_params(params);
}

LatencyReport LatencyReport::from_samples(std::vector<double> ms) {
  LatencyReport r;
  r.per_frame_ms = ms;
  if (ms.empty()) return r;
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  r.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  r.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  return r;
}

nlohmann::json LatencyReport::to_json() const {
  return {{"frames", per_frame_ms.size()},
          {"mean_ms", mean_ms},
          {"median_ms", median_ms},
          {"p95_ms", p95_ms},
          {"per_frame_ms", per_frame_ms}};
}

StreamSession::StreamSession(std::shared_ptr<const LoadedModel> model, SessionOptions options)
    : model_(std::move(model)), options_(options) {
  const int k = model_->backbone.config().context_K;
  if (options_.context_K && *options_.context_K != k) {
    throw ConfigMismatchError("session: requested K=" + std::to_string(*options_.context_K) +
                              " but the checkpoint was trained with K=" + std::to_string(k));
  }
  disable_context_ = options_.disable_context.value_or(model_->disable_context);
}

Frame StreamSession::push_frame(const Frame& frame) {
  const auto start = std::chrono::steady_clock::now();
  const Backbone& bb = model_->backbone;
  validate_frame(frame);
  if (frame.height != bb.config().frame_height || frame.width != bb.config().frame_width) {
    throw DimensionError("push_frame: frame size does not match the model");
  }
  static const TemporalContext kEmpty;
  const LatentGrid z = bb.codec().encode(frame);
  const LatentGrid out_latent = bb.forward(z, disable_context_ ? kEmpty : history_, model_->params);
  ++evaluations_;
  Frame out = bb.codec().decode(out_latent);
  out.pixels = out.pixels.cwiseMax(0.0).cwiseMin(1.0);

  const auto k = static_cast<std::size_t>(bb.config().context_K);
  if (k > 0 && !disable_context_) {
    history_.entries.insert(history_.entries.begin(),
                            options_.store_predecode_latents ? out_latent : bb.codec().encode(out));
    history_.timestamps.insert(history_.timestamps.begin(), frame_index_);
    if (history_.entries.size() > k) {
      history_.entries.resize(k);
      history_.timestamps.resize(k);
    }
  }
  max_history_ = std::max(max_history_, history_.size());
  ++frame_index_;
  latency_ms_.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  return out;
}

void StreamSession::reset() {
  history_.entries.clear();
  history_.timestamps.clear();
}

StreamSession open_session(const Checkpoint& checkpoint, const SessionOptions& options) {
  return StreamSession(std::make_shared<const LoadedModel>(checkpoint), options);
}

StreamSession open_session(const std::filesystem::path& checkpoint, const SessionOptions& options) {
  return open_session(load_checkpoint(checkpoint), options);
}

ClipResult enhance_clip(StreamSession& session, const std::vector<Frame>& clip) {
  ClipResult r;
  for (const Frame& f : clip) r.frames.push_back(session.push_frame(f));
  r.report = session.latency();
  return r;
}

ClipResult enhance_clip(const Checkpoint& checkpoint, const std::vector<Frame>& clip, const SessionOptions& options) {
  StreamSession s = open_session(checkpoint, options);
  return enhance_clip(s, clip);
}

}  // namespace harmonizer
