#pragma once

#include <cstdint>
#include <vector>

#include "featup/tensor.hpp"

namespace featup {

/// d x channels Gaussian matrix with entries N(0, 1/d), fixed by `seed`.
std::vector<double> random_projection_matrix(int channels, int d, std::uint64_t seed);

/// Applies a d x C matrix to every feature vector of `fm`.
FeatureMap project_channels(const FeatureMap& fm, const std::vector<double>& matrix, int d);

/// Seeded Johnson-Lindenstrauss projection of every feature vector to d dims.
FeatureMap random_projection(const FeatureMap& fm, int d, std::uint64_t seed);

}  // namespace featup
