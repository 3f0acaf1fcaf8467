#include "harmonizer/features.hpp"

#include "harmonizer/rng.hpp"

#include <algorithm>
#include <cmath>

namespace harmonizer {

namespace {

ConvStage random_stage(Rng& rng, int in_c, int out_c, int stride) {
  ConvStage s;
  s.kernel = 3;
  s.stride = stride;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.relu = true;
  const int fan_in = 9 * in_c;
  const double std = std::sqrt(2.0 / fan_in);
  s.weight = Mat(fan_in, out_c);
  for (Eigen::Index i = 0; i < s.weight.size(); ++i) s.weight.data()[i] = std * rng.normal();
  s.bias = Mat::Zero(1, out_c);
  return s;
}

}  // namespace

ConvFeatureExtractor::ConvFeatureExtractor(std::uint64_t seed) : input_shift_(-0.5) {
  Rng rng(seed);
  stages_.push_back(random_stage(rng, 3, 8, 1));
  stages_.push_back(random_stage(rng, 8, 16, 2));
  stages_.push_back(random_stage(rng, 16, 32, 2));
}

ConvFeatureExtractor::ConvFeatureExtractor(std::vector<ConvStage> stages, double input_shift)
    : stages_(std::move(stages)), input_shift_(input_shift) {
  if (stages_.empty()) throw InvalidArgument("ConvFeatureExtractor: need at least one stage");
  int c = 3;
  for (const auto& s : stages_) {
    if (s.in_channels != c || s.kernel <= 0 || s.stride <= 0 ||
        s.weight.rows() != s.kernel * s.kernel * s.in_channels || s.weight.cols() != s.out_channels ||
        s.bias.rows() != 1 || s.bias.cols() != s.out_channels) {
      throw InvalidArgument("ConvFeatureExtractor: inconsistent stage definition");
    }
    c = s.out_channels;
  }
}

int ConvFeatureExtractor::min_input_size() const {
  int size = 1;
  for (const auto& s : stages_) size *= s.stride;
  return std::max(size, stages_.front().kernel);
}

FeatureMap conv2d(ag::Var x, int height, int width, const ConvStage& s) {
  if (x.rows() != static_cast<Eigen::Index>(height) * width || x.cols() != s.in_channels) {
    throw DimensionError("conv2d: input shape mismatch");
  }
  const int pad = s.kernel / 2;
  const int oh = (height + 2 * pad - s.kernel) / s.stride + 1;
  const int ow = (width + 2 * pad - s.kernel) / s.stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: input smaller than kernel");
  const int cols = s.kernel * s.kernel * s.in_channels;
  std::vector<int> index(static_cast<std::size_t>(oh) * ow * cols);
  std::size_t k = 0;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int iy = oy * s.stride + ky - pad, ix = ox * s.stride + kx - pad;
          const bool inside = iy >= 0 && ix >= 0 && iy < height && ix < width;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            index[k++] = inside ? (iy * width + ix) * s.in_channels + ci : -1;
          }
        }
      }
    }
  }
  ag::Tape& t = *x.tape;
  ag::Var patches = ag::gather(x, index, oh * ow, cols);
  ag::Var y = ag::add_row(ag::matmul(patches, t.constant(s.weight)), t.constant(s.bias));
  if (s.relu) y = ag::relu(y);
  return FeatureMap{y, oh, ow};
}

std::vector<FeatureMap> ConvFeatureExtractor::extract(ag::Var pixels, int height, int width) const {
  if (height < min_input_size() || width < min_input_size()) {
    throw DimensionError("feature extractor: input smaller than " + std::to_string(min_input_size()));
  }
  ag::Var x = pixels;
  if (input_shift_ != 0.0) {
    Mat shift = Mat::Constant(1, pixels.cols(), input_shift_);
    x = ag::add_row(x, pixels.tape->constant(shift));
  }
  std::vector<FeatureMap> out;
  int h = height, w = width;
  for (const auto& s : stages_) {
    FeatureMap m = conv2d(x, h, w, s);
    out.push_back(m);
    x = m.values;
    h = m.height;
    w = m.width;
  }
  return out;
}

}  // namespace harmonizer
