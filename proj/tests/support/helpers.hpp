#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "featup/tensor.hpp"

namespace featup::testing {

template <typename T = float>
BasicFeatureMap<T> random_map(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  BasicFeatureMap<T> fm(c, h, w);
  for (auto& v : fm.storage()) v = static_cast<T>(normal(rng));
  return fm;
}

template <typename T = float>
BasicImage<T> random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<T> px(static_cast<std::size_t>(h) * w * 3);
  for (auto& v : px) v = static_cast<T>(unit(rng));
  return BasicImage<T>(h, w, std::move(px));
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
double max_abs_diff(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b) {
  return max_abs_diff(a.storage(), b.storage());
}

/// Fresh directory removed on scope exit.
struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& tag)
      : path(std::filesystem::temp_directory_path() / ("featup_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }
};

}  // namespace featup::testing
