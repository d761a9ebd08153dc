#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "featup/tensor.hpp"

namespace featup {

/// Whole-file read; throws FormatError naming the path when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// NumPy ".npy" version 1.0, little-endian float32, C order, shape (C,H,W) or (1,C,H,W).
FeatureMap decode_npy(std::string_view bytes, const std::string& origin = "npy data");
std::string encode_npy(const FeatureMap& fm);
FeatureMap read_npy(const std::filesystem::path& path);
void write_npy(const FeatureMap& fm, const std::filesystem::path& path);

/// 8-bit PNG; any color type is converted to RGB and scaled to [0,1].
GuidanceImage decode_png(std::string_view bytes, const std::string& origin = "png data");
/// Rounds each value in [0,1] to the nearest 8-bit level.
std::string encode_png(const GuidanceImage& image);
GuidanceImage read_png(const std::filesystem::path& path);
void write_png(const GuidanceImage& image, const std::filesystem::path& path);

}  // namespace featup
