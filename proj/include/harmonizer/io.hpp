#pragma once

#include "harmonizer/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace harmonizer {

/// Round-to-nearest 8-bit quantisation of a [0, 1] value (clamped first).
std::uint8_t to_u8(double v);

/// Writes an 8-bit PNG (grey for 1 channel, RGB for 3). Output bytes depend
/// only on the pixel values.
void write_png(const std::filesystem::path& path, const Image& image);
/// Reads an 8-bit grey or RGB PNG into [0, 1].
Image read_png(const std::filesystem::path& path);

/// Image after an 8-bit round trip.
Image quantize8(const Image& image);

}  // namespace harmonizer
