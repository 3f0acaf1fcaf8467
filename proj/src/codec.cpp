#include "harmonizer/codec.hpp"

#include "harmonizer/rng.hpp"

#include <string>

namespace harmonizer {

Codec::Codec(CodecConfig config) : config_(config) {
  if (config_.patch <= 0) throw InvalidArgument("Codec: patch size must be positive");
  const int c = latent_channels();
  Rng rng(config_.mixing_seed);
  Mat g(c, c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Mat> qr(g);
  mixing_ = qr.householderQ() * Mat::Identity(c, c);
}

void Codec::check_frame_dims(int height, int width) const {
  const int p = config_.patch;
  if (height < p || width < p || height % p != 0 || width % p != 0) {
    throw DimensionError("codec: frame " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by patch size " + std::to_string(p));
  }
}

std::vector<int> Codec::space_to_depth_index(int height, int width) const {
  const int p = config_.patch;
  const int h = height / p, w = width / p, c = latent_channels();
  std::vector<int> index(static_cast<std::size_t>(h) * w * c);
  std::size_t k = 0;
  for (int ty = 0; ty < h; ++ty) {
    for (int tx = 0; tx < w; ++tx) {
      for (int dy = 0; dy < p; ++dy) {
        for (int dx = 0; dx < p; ++dx) {
          const int pix = (ty * p + dy) * width + tx * p + dx;
          for (int ch = 0; ch < 3; ++ch) index[k++] = pix * 3 + ch;
        }
      }
    }
  }
  return index;
}

std::vector<int> Codec::depth_to_space_index(int height, int width) const {
  const std::vector<int> fwd = space_to_depth_index(height, width);
  std::vector<int> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = static_cast<int>(i);
  return inv;
}

LatentGrid Codec::encode(const Image& frame) const {
  if (frame.channels() != 3) throw DimensionError("codec: frame must have 3 channels");
  check_frame_dims(frame.height, frame.width);
  ag::Tape tape;
  ag::Var z = encode(tape.constant(frame.pixels), frame.height, frame.width);
  return LatentGrid{frame.height / config_.patch, frame.width / config_.patch, z.value()};
}

Image Codec::decode(const LatentGrid& latent) const {
  if (latent.channels() != latent_channels() || latent.values.rows() != static_cast<Eigen::Index>(latent.height) * latent.width) {
    throw DimensionError("codec: latent shape inconsistent with patch size");
  }
  const int height = latent.height * config_.patch, width = latent.width * config_.patch;
  ag::Tape tape;
  ag::Var x = decode(tape.constant(latent.values), height, width);
  return Image(height, width, x.value());
}

ag::Var Codec::encode(ag::Var pixels, int height, int width) const {
  check_frame_dims(height, width);
  if (pixels.rows() != static_cast<Eigen::Index>(height) * width || pixels.cols() != 3) {
    throw DimensionError("codec: pixel matrix shape mismatch");
  }
  const int p = config_.patch;
  const int tokens = (height / p) * (width / p);
  ag::Var packed = ag::gather(pixels, space_to_depth_index(height, width), tokens, latent_channels());
  return ag::matmul(packed, pixels.tape->constant(mixing_));
}

ag::Var Codec::decode(ag::Var latent, int height, int width) const {
  check_frame_dims(height, width);
  const int p = config_.patch;
  if (latent.rows() != static_cast<Eigen::Index>(height / p) * (width / p) || latent.cols() != latent_channels()) {
    throw DimensionError("codec: latent matrix shape mismatch");
  }
  ag::Var packed = ag::matmul_nt(latent, latent.tape->constant(mixing_));
  return ag::gather(packed, depth_to_space_index(height, width), height * width, 3);
}

}  // namespace harmonizer
