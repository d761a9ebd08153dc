#include "featup/projection.hpp"

#include <cmath>
#include <random>

namespace featup {

std::vector<double> random_projection_matrix(int channels, int d, std::uint64_t seed) {
  if (d < 1) throw ParameterError("projection dimension must be >= 1, got " + std::to_string(d));
  if (channels < 1) throw DimensionError("projection needs at least one input channel");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> m(static_cast<std::size_t>(d) * channels);
  for (auto& v : m) v = normal(rng) * scale;
  return m;
}

FeatureMap project_channels(const FeatureMap& fm, const std::vector<double>& matrix, int d) {
  if (fm.empty()) throw DimensionError("cannot project an empty feature map");
  const int c = fm.channels();
  if (matrix.size() != static_cast<std::size_t>(d) * c) throw DimensionError("projection matrix shape mismatch");
  const int n = fm.plane();
  FeatureMap out(d, fm.height(), fm.width());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double* row = matrix.data() + static_cast<std::size_t>(j) * c;
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) acc += row[ch] * fm.channel(ch)[i];
      out.channel(j)[i] = static_cast<float>(acc);
    }
  }
  return out;
}

FeatureMap random_projection(const FeatureMap& fm, int d, std::uint64_t seed) {
  if (fm.empty()) throw DimensionError("cannot project an empty feature map");
  return project_channels(fm, random_projection_matrix(fm.channels(), d, seed), d);
}

}  // namespace featup
