#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asconv/tensor.hpp"

namespace asconv {

/// Reads an 8-bit PNG as [1, 3, H, W] with values v / 255. RGBA drops alpha
/// and grayscale is expanded to three equal channels; both append a message
/// to `warnings` when given. 16-bit files throw FormatError; unreadable
/// files throw IoError.
TensorF png_read(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Writes [1, 3, H, W] as 8-bit RGB after clamping to [0, 1] and rounding
/// v * 255 to the nearest integer.
void png_write(const TensorF& image, const std::string& path);

std::uint8_t quantize_u8(float v);

/// Image size without decoding pixels: {width, height}.
std::pair<std::size_t, std::size_t> png_dimensions(const std::string& path);

}  // namespace asconv
