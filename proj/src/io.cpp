#include "harmonizer/io.hpp"

#include "harmonizer/bytes.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <memory>

namespace harmonizer {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::uint8_t to_u8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Image quantize8(const Image& image) {
  Image out = image;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) out.pixels.data()[i] = to_u8(out.pixels.data()[i]) / 255.0;
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  const int c = image.channels();
  if (c != 1 && c != 3) throw DimensionError("write_png: need 1 or 3 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(image.width) * image.height * c);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int k = 0; k < c; ++k) pixels[(static_cast<std::size_t>(y) * image.width + x) * c + k] = to_u8(image.at(y, x, k));
    }
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (png == nullptr) throw std::runtime_error("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png: failed to encode " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width, image.height, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * image.width * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("png: bad signature in " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError("png: cannot decode " + path.string() + ": " + img.message);
  }
  const bool grey = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = grey ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError("png: cannot decode " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width), c);
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels.data()[i] = buf[i] / 255.0;
  return out;
}

}  // namespace harmonizer
