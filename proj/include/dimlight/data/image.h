#pragma once

#include <cstdint>
#include <filesystem>

#include "dimlight/tensor/tensor.h"

namespace dimlight::data {

/// Reads an 8-bit PNG as a (1, 3, h, w) tensor with byte b mapped to b / 255.
/// Grayscale and palette images are promoted to RGB. Throws IoError.
Tensor<float> load_image(const std::filesystem::path& path);

/// Writes a (1, 3, h, w) tensor as RGB or a (1, 1, h, w) tensor as grayscale,
/// quantizing each value with to_byte. Throws IoError.
void save_image(const Tensor<float>& image, const std::filesystem::path& path);

/// Clamp to [0, 1], then round(v * 255) with halves rounded up. NaN maps to 0.
std::uint8_t to_byte(float v);

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

/// Extents from the file header without decoding pixels.
ImageSize read_image_size(const std::filesystem::path& path);

}  // namespace dimlight::data
