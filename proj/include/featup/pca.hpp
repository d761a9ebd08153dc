#pragma once

#include <vector>

#include "featup/tensor.hpp"

namespace featup {

/// Principal axes of the per-pixel feature vectors of a map.
struct PcaModel {
  int channels = 0;
  int k = 0;
  std::vector<double> mean;                // channels
  std::vector<double> components;          // k x channels, orthonormal rows
  std::vector<double> explained_variance;  // k, nonincreasing

  /// k x H x W coordinates of every pixel in the principal basis.
  FeatureMap project(const FeatureMap& fm) const;
  /// Inverse of project for the retained subspace: C x H x W.
  FeatureMap reconstruct(const FeatureMap& coords) const;
  template <typename T>
  BasicFeatureMap<T> reconstruct_as(const BasicFeatureMap<T>& coords) const;
};

/// Fits the top-k eigenvectors of the channel covariance over all H*W vectors.
/// Zero-variance input yields an arbitrary orthonormal basis with zero variance.
PcaModel pca_fit(const FeatureMap& fm, int k);

}  // namespace featup
