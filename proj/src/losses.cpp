#include "harmonizer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace harmonizer {

void LossWeights::validate(int height, int width) const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(lambda_l2) || !ok(lambda_perc) || !ok(lambda_temp)) {
    throw InvalidArgument("LossWeights: lambdas must be finite and non-negative");
  }
  for (double v : layer_weights) {
    if (!ok(v)) throw InvalidArgument("LossWeights: layer weights must be finite and non-negative");
  }
  if (patches_per_step <= 0) throw InvalidArgument("LossWeights: patches_per_step must be positive");
  if (patch_min <= 0 || patch_min > patch_max) throw InvalidArgument("LossWeights: need 0 < patch_min <= patch_max");
  if (patch_max > std::min(height, width)) {
    throw InvalidArgument("LossWeights: patch_max " + std::to_string(patch_max) + " exceeds frame side " +
                          std::to_string(std::min(height, width)));
  }
}

std::vector<double> LossWeights::stage_weights(int stages) const {
  if (layer_weights.empty()) return std::vector<double>(static_cast<std::size_t>(stages), 1.0 / stages);
  if (static_cast<int>(layer_weights.size()) != stages) {
    throw InvalidArgument("LossWeights: layer_weights count does not match extractor stages");
  }
  return layer_weights;
}

LossWeights paper_loss_weights() {
  LossWeights w;
  w.patch_min = 128;
  w.patch_max = 512;
  return w;
}

std::vector<PatchSample> sample_patches(const LossWeights& w, int height, int width, Rng& rng) {
  w.validate(height, width);
  std::vector<PatchSample> out;
  out.reserve(static_cast<std::size_t>(w.patches_per_step));
  for (int i = 0; i < w.patches_per_step; ++i) {
    PatchSample p;
    p.size = rng.uniform_int(w.patch_min, w.patch_max);
    p.y = rng.uniform_int(0, height - p.size);
    p.x = rng.uniform_int(0, width - p.size);
    out.push_back(p);
  }
  return out;
}

ag::Var loss_l2(ag::Var pred, ag::Var target) { return ag::mean_square(ag::sub(pred, target)); }

double loss_l2(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "loss_l2");
  ag::Tape t;
  return loss_l2(t.constant(pred.pixels), t.constant(target.pixels)).scalar();
}

namespace {

std::vector<int> crop_index(const PatchSample& p, int width, int channels) {
  std::vector<int> idx(static_cast<std::size_t>(p.size) * p.size * channels);
  std::size_t k = 0;
  for (int y = 0; y < p.size; ++y) {
    for (int x = 0; x < p.size; ++x) {
      for (int c = 0; c < channels; ++c) idx[k++] = ((p.y + y) * width + p.x + x) * channels + c;
    }
  }
  return idx;
}

}  // namespace

ag::Var loss_perceptual(ag::Var pred, ag::Var target, int height, int width, const FeatureExtractor& fx,
                        const LossWeights& w, Rng& rng, const PatchHook& hook) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      pred.rows() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("loss_perceptual: shape mismatch");
  }
  const int channels = static_cast<int>(pred.cols());
  const auto patches = sample_patches(w, height, width, rng);
  const auto lambdas = w.stage_weights(fx.stage_count());
  ag::Tape& tape = *pred.tape;
  ag::Var acc = tape.constant(Mat::Zero(1, 1));
  for (const PatchSample& p : patches) {
    if (hook) hook(p, p);
    const auto idx = crop_index(p, width, channels);
    const int rows = p.size * p.size;
    const auto fp = fx.extract(ag::gather(pred, idx, rows, channels), p.size, p.size);
    const auto ft = fx.extract(ag::gather(target, idx, rows, channels), p.size, p.size);
    for (std::size_t l = 0; l < fp.size(); ++l) {
      if (lambdas[l] == 0.0) continue;
      ag::Var d = ag::sum_square(ag::sub(fp[l].values, ft[l].values));
      double s = lambdas[l];
      if (w.normalize_features) s /= static_cast<double>(fp[l].values.value().size());
      acc = ag::add(acc, ag::scale(d, s));
    }
  }
  return ag::scale(acc, 1.0 / static_cast<double>(patches.size()));
}

double loss_perceptual(const Image& pred, const Image& target, const FeatureExtractor& fx, const LossWeights& w,
                       Rng& rng) {
  require_same_shape(pred, target, "loss_perceptual");
  ag::Tape t;
  return loss_perceptual(t.constant(pred.pixels), t.constant(target.pixels), pred.height, pred.width, fx, w, rng)
      .scalar();
}

ag::Var loss_temporal(ag::Var pred_t, ag::Var pred_tm1, int height, int width, const FlowField& flow,
                      const ValidityMask& valid) {
  if (pred_t.rows() != pred_tm1.rows() || pred_t.cols() != pred_tm1.cols() ||
      pred_t.rows() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("loss_temporal: frame shape mismatch");
  }
  if (valid.height != height || valid.width != width) throw DimensionError("loss_temporal: mask size mismatch");
  ValidityMask warp_valid;
  ag::Var warped = warp(pred_tm1, height, width, flow, &warp_valid);
  const ValidityMask omega = intersect(warp_valid, valid);
  const std::size_t n = omega.count();
  ag::Tape& tape = *pred_t.tape;
  if (n == 0) return tape.constant(Mat::Zero(1, 1));
  std::vector<double> weight(omega.valid.begin(), omega.valid.end());
  return ag::weighted_row_square(ag::sub(pred_t, warped), weight, static_cast<double>(n) * pred_t.cols());
}

double loss_temporal(const Image& pred_t, const Image& pred_tm1, const FlowField& flow, const ValidityMask& valid) {
  require_same_shape(pred_t, pred_tm1, "loss_temporal");
  ag::Tape t;
  return loss_temporal(t.constant(pred_t.pixels), t.constant(pred_tm1.pixels), pred_t.height, pred_t.width, flow, valid)
      .scalar();
}

LossResult loss_total(ag::Var pred, ag::Var target, int height, int width, const std::optional<TemporalInputs>& temporal,
                      const LossWeights& w, const FeatureExtractor& fx, Rng& rng, const PatchHook& hook) {
  if (!temporal && w.lambda_temp != 0.0) {
    throw LossContractError("loss_total: lambda_temp is non-zero but the batch has no temporal inputs");
  }
  LossResult r;
  ag::Var l2 = loss_l2(pred, target);
  r.breakdown.l2 = l2.scalar();
  ag::Var total = ag::scale(l2, w.lambda_l2);
  if (w.lambda_perc != 0.0) {
    ag::Var perc = loss_perceptual(pred, target, height, width, fx, w, rng, hook);
    r.breakdown.perc = perc.scalar();
    total = ag::add(total, ag::scale(perc, w.lambda_perc));
  }
  if (temporal && w.lambda_temp != 0.0) {
    if (temporal->flow == nullptr || temporal->valid == nullptr) {
      throw LossContractError("loss_total: temporal inputs need flow and validity");
    }
    ag::Var temp = loss_temporal(pred, temporal->pred_tm1, height, width, *temporal->flow, *temporal->valid);
    r.breakdown.temp = temp.scalar();
    total = ag::add(total, ag::scale(temp, w.lambda_temp));
  }
  r.total = total;
  r.breakdown.total = total.scalar();
  return r;
}

}  // namespace harmonizer
