#include "harmonizer/tensor.hpp"

namespace harmonizer {

void validate_frame(const Frame& f) {
  if (f.channels() != 3) throw DimensionError("frame must have 3 channels");
  if (f.height <= 0 || f.width <= 0) throw DimensionError("frame must be non-empty");
  if (!f.pixels.allFinite()) throw InvalidArgument("frame contains non-finite values");
  if (f.pixels.minCoeff() < 0.0 || f.pixels.maxCoeff() > 1.0) throw InvalidArgument("frame values outside [0, 1]");
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels()) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels()));
  }
}

}  // namespace harmonizer
