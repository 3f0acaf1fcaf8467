#pragma once

#include "harmonizer/rng.hpp"
#include "harmonizer/tensor.hpp"

#include <array>
#include <utility>
#include <vector>

namespace harmonizer {

/// Parametric software ISP. Stages run in this order:
///   1. exposure gain 2^exposure_ev
///   2. per-channel white-balance gains
///   3. saturation: blend with Rec.709 luma, out = s * v + (1 - s) * Y
///   4. clamp to [0, 1], then the piecewise-linear tone curve
///   5. gamma: out = v^(1 / gamma)
///   6. clamp to [0, 1]
struct IspParams {
  double exposure_ev = 0.0;
  std::array<double, 3> wb_gains{1.0, 1.0, 1.0};
  double gamma = 1.0;
  double saturation = 1.0;
  std::vector<std::pair<double, double>> tone_knots{{0.0, 0.0}, {1.0, 1.0}};

  void validate() const;
};

struct IspRanges {
  double ev_min = -1.5, ev_max = 1.5;
  double gain_min = 0.6, gain_max = 1.6;
  double gamma_min = 0.7, gamma_max = 1.4;
  double sat_min = 0.5, sat_max = 1.5;
  int interior_knots = 3;
  double knot_jitter = 0.12;
};

IspParams sample_isp_params(Rng& rng, const IspRanges& ranges = {});

/// Small per-frame perturbation of `base` used for video samples.
IspParams jitter_isp_params(const IspParams& base, Rng& rng, double amount);

/// Evaluates the tone curve at v in [0, 1].
double tone_curve(const std::vector<std::pair<double, double>>& knots, double v);

Image apply_isp(const Image& frame, const IspParams& params);

}  // namespace harmonizer
