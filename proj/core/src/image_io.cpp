#include "asconv/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "asconv/error.hpp"

namespace asconv {
namespace {

// RAII wrapper around the simplified libpng read API.
struct PngHandle {
  png_image image{};
  PngHandle() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngHandle() { png_image_free(&image); }
  PngHandle(const PngHandle&) = delete;
  PngHandle& operator=(const PngHandle&) = delete;
};

void begin(PngHandle& h, const std::string& path) {
  if (!png_image_begin_read_from_file(&h.image, path.c_str())) {
    throw IoError("cannot read PNG '" + path + "': " + h.image.message);
  }
}

}  // namespace

std::uint8_t quantize_u8(float v) {
  const float c = std::clamp(std::isnan(v) ? 0.0f : v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::pair<std::size_t, std::size_t> png_dimensions(const std::string& path) {
  PngHandle h;
  begin(h, path);
  return {h.image.width, h.image.height};
}

TensorF png_read(const std::string& path, std::vector<std::string>* warnings) {
  PngHandle h;
  begin(h, path);
  const png_uint_32 format = h.image.format;
  if (format & PNG_FORMAT_FLAG_LINEAR) {
    throw FormatError("'" + path + "': unsupported bit depth (16-bit); only 8-bit PNG is supported");
  }
  if (warnings) {
    if (!(format & PNG_FORMAT_FLAG_COLOR)) {
      warnings->push_back("'" + path + "': grayscale expanded to RGB");
    }
    if (format & PNG_FORMAT_FLAG_ALPHA) warnings->push_back("'" + path + "': alpha channel dropped");
  }
  // Decode as RGBA and drop alpha here so libpng does not composite.
  h.image.format = PNG_FORMAT_RGBA;
  const std::size_t w = h.image.width, ht = h.image.height;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(h.image));
  if (!png_image_finish_read(&h.image, nullptr, buf.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG '" + path + "': " + h.image.message);
  }
  TensorF out(Shape{1, 3, ht, w});
  for (std::size_t y = 0; y < ht; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const png_byte* px = &buf[(y * w + x) * 4];
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<float>(px[c]) / 255.0f;
    }
  }
  return out;
}

void png_write(const TensorF& image, const std::string& path) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("png_write: expected [1,3,H,W], got " + image.shape().str());
  }
  const std::size_t h = image.dim(2), w = image.dim(3);
  std::vector<png_byte> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) buf[(y * w + x) * 3 + c] = quantize_u8(image.at(0, c, y, x));
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG '" + path + "': " + msg);
  }
}

}  // namespace asconv
