#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "featup/io.hpp"

namespace featup {

GuidanceImage decode_png(std::string_view bytes, const std::string& origin) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(origin + ": not a readable PNG (" + img.message + ")");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError(origin + ": corrupt PNG (" + msg + ")");
  }
  std::vector<float> px(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) px[i] = static_cast<float>(raw[i]) / 255.0f;
  return GuidanceImage(static_cast<int>(img.height), static_cast<int>(img.width), std::move(px));
}

std::string encode_png(const GuidanceImage& image) {
  if (image.empty()) throw DimensionError("cannot write an empty image");
  std::vector<unsigned char> raw(image.pixels().size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(image.pixels()[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encoding failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

GuidanceImage read_png(const std::filesystem::path& path) { return decode_png(read_file(path), path.string()); }

void write_png(const GuidanceImage& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace featup
