#include "harmonizer/isp.hpp"

#include <algorithm>
#include <cmath>

namespace harmonizer {

void IspParams::validate() const {
  if (!std::isfinite(exposure_ev)) throw InvalidArgument("IspParams: exposure must be finite");
  for (double g : wb_gains) {
    if (!(g > 0.0) || !std::isfinite(g)) throw InvalidArgument("IspParams: white-balance gains must be positive");
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("IspParams: gamma must be positive");
  if (!(saturation >= 0.0) || !std::isfinite(saturation)) throw InvalidArgument("IspParams: saturation must be >= 0");
  if (tone_knots.size() < 2 || tone_knots.front() != std::make_pair(0.0, 0.0) ||
      tone_knots.back() != std::make_pair(1.0, 1.0)) {
    throw InvalidArgument("IspParams: tone curve must run from (0,0) to (1,1)");
  }
  for (std::size_t i = 1; i < tone_knots.size(); ++i) {
    if (!(tone_knots[i].first > tone_knots[i - 1].first) || tone_knots[i].second < tone_knots[i - 1].second) {
      throw InvalidArgument("IspParams: tone curve must be monotone with increasing inputs");
    }
  }
}

IspParams sample_isp_params(Rng& rng, const IspRanges& r) {
  IspParams p;
  p.exposure_ev = rng.uniform(r.ev_min, r.ev_max);
  for (double& g : p.wb_gains) g = rng.uniform(r.gain_min, r.gain_max);
  p.gamma = rng.uniform(r.gamma_min, r.gamma_max);
  p.saturation = rng.uniform(r.sat_min, r.sat_max);
  p.tone_knots.clear();
  p.tone_knots.emplace_back(0.0, 0.0);
  std::vector<double> ys;
  for (int i = 1; i <= r.interior_knots; ++i) {
    const double x = static_cast<double>(i) / (r.interior_knots + 1);
    ys.push_back(std::clamp(x + rng.uniform(-r.knot_jitter, r.knot_jitter), 0.0, 1.0));
  }
  std::sort(ys.begin(), ys.end());
  for (int i = 1; i <= r.interior_knots; ++i) {
    p.tone_knots.emplace_back(static_cast<double>(i) / (r.interior_knots + 1), ys[i - 1]);
  }
  p.tone_knots.emplace_back(1.0, 1.0);
  return p;
}

IspParams jitter_isp_params(const IspParams& base, Rng& rng, double amount) {
  IspParams p = base;
  p.exposure_ev += rng.uniform(-amount, amount);
  for (double& g : p.wb_gains) g = std::max(0.05, g * (1.0 + rng.uniform(-amount, amount) * 0.5));
  p.saturation = std::max(0.0, p.saturation + rng.uniform(-amount, amount) * 0.5);
  return p;
}

double tone_curve(const std::vector<std::pair<double, double>>& knots, double v) {
  if (v <= knots.front().first) return knots.front().second;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (v <= knots[i].first) {
      const auto [x0, y0] = knots[i - 1];
      const auto [x1, y1] = knots[i];
      return y0 + (v - x0) * (y1 - y0) / (x1 - x0);
    }
  }
  return knots.back().second;
}

Image apply_isp(const Image& frame, const IspParams& params) {
  params.validate();
  validate_frame(frame);
  Image out = frame;
  auto px = out.pixels.array();
  const double gain = std::exp2(params.exposure_ev);
  px *= gain;
  for (int c = 0; c < 3; ++c) px.col(c) *= params.wb_gains[c];
  const Eigen::ArrayXd luma = 0.2126 * px.col(0) + 0.7152 * px.col(1) + 0.0722 * px.col(2);
  const double s = params.saturation;
  for (int c = 0; c < 3; ++c) px.col(c) = s * px.col(c) + (1.0 - s) * luma;
  const double inv_gamma = 1.0 / params.gamma;
  const auto& knots = params.tone_knots;
  px = px.unaryExpr([&knots, inv_gamma](double v) {
    const double t = tone_curve(knots, std::clamp(v, 0.0, 1.0));
    return std::clamp(std::pow(t, inv_gamma), 0.0, 1.0);
  });
  return out;
}

}  // namespace harmonizer
