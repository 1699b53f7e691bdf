#include "dimlight/data/image.h"

#include <png.h>

#include <cmath>
#include <vector>

#include "dimlight/errors.h"

namespace dimlight::data {
namespace {

struct PngReader {
  png_image image{};
  explicit PngReader(const std::filesystem::path& path) {
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
      const std::string why = image.message;
      png_image_free(&image);
      throw IoError("cannot read image " + path.string() + ": " + why);
    }
  }
  ~PngReader() { png_image_free(&image); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
};

}  // namespace

std::uint8_t to_byte(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

ImageSize read_image_size(const std::filesystem::path& path) {
  PngReader r(path);
  return {r.image.height, r.image.width};
}

Tensor<float> load_image(const std::filesystem::path& path) {
  PngReader r(path);
  r.image.format = PNG_FORMAT_RGB;
  const std::size_t h = r.image.height;
  const std::size_t w = r.image.width;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(r.image));
  if (png_image_finish_read(&r.image, nullptr, buf.data(), 0, nullptr) == 0) {
    throw IoError("cannot decode image " + path.string() + ": " + r.image.message);
  }
  Tensor<float> out(Shape{1, 3, h, w});
  auto d = out.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        d[(c * h + y) * w + x] = static_cast<float>(buf[(y * w + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return out;
}

void save_image(const Tensor<float>& image, const std::filesystem::path& path) {
  const auto [n, c, h, w] = image.shape();
  if (n != 1 || (c != 1 && c != 3)) {
    throw DimensionError("save_image expects (1, 3, h, w) or (1, 1, h, w), got " + to_string(image.shape()));
  }
  std::vector<png_byte> buf(c * h * w);
  auto d = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) buf[(y * w + x) * c + k] = to_byte(d[(k * h + y) * w + x]);
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr) == 0) {
    const std::string why = img.message;
    png_image_free(&img);
    throw IoError("cannot write image " + path.string() + ": " + why);
  }
  png_image_free(&img);
}

}  // namespace dimlight::data
