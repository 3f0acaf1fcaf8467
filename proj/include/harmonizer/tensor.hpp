#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmonizer {

/// Row-major dense matrix. Images store one pixel per row and one channel per
/// column; token grids store one token per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// H x W grid with C channels, pixel (y, x) at row y * W + x.
struct Image {
  int height = 0;
  int width = 0;
  Mat pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), pixels(Mat::Zero(static_cast<Eigen::Index>(h) * w, c)) {}
  Image(int h, int w, Mat px) : height(h), width(w), pixels(std::move(px)) {
    if (pixels.rows() != static_cast<Eigen::Index>(h) * w) throw DimensionError("Image: pixel rows do not match H*W");
  }

  int channels() const { return static_cast<int>(pixels.cols()); }
  int index(int y, int x) const { return y * width + x; }
  double& at(int y, int x, int c) { return pixels(index(y, x), c); }
  double at(int y, int x, int c) const { return pixels(index(y, x), c); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels() == o.channels();
  }
  bool operator==(const Image& o) const { return same_shape(o) && pixels == o.pixels; }
};

/// A frame is a 3-channel image with values in [0, 1].
using Frame = Image;
/// Single-channel image with values in {0, 1}.
using Mask = Image;

inline Image filled(int h, int w, int c, double v) {
  Image im(h, w, c);
  im.pixels.setConstant(v);
  return im;
}

/// Throws unless `f` is a finite 3-channel frame with values in [0, 1].
void validate_frame(const Frame& f);

void require_same_shape(const Image& a, const Image& b, const char* what);

/// Row-major flattening of a 2-D token/latent grid.
struct LatentGrid {
  int height = 0;  // h = H / p
  int width = 0;   // w = W / p
  Mat values;      // (h*w) x c

  int channels() const { return static_cast<int>(values.cols()); }
  bool operator==(const LatentGrid& o) const {
    return height == o.height && width == o.width && values == o.values;
  }
};

}  // namespace harmonizer
