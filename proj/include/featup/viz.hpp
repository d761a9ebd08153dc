#pragma once

#include <array>
#include <filesystem>

#include "featup/pca.hpp"
#include "featup/tensor.hpp"

namespace featup {

struct PcaVisualization {
  PcaModel pca;            // 3 components fit on the low-resolution vectors
  FeatureMap lr_coords;    // 3 x h x w
  FeatureMap hr_coords;    // 3 x H x W
  std::array<double, 3> lo{}, hi{};  // per-component range of lr_coords
  GuidanceImage lr_rgb;    // h x w
  GuidanceImage hr_rgb;    // H x W
};

/// Fits a 3-component PCA on `lr`, projects both maps and scales every
/// component to [0,1] with the low-resolution range (0.5 when that range is 0).
PcaVisualization pca_visualize(const FeatureMap& lr, const FeatureMap& hr);

/// Both panels at the high-resolution size, low-resolution panel on the left
/// (nearest-neighbor enlarged).
GuidanceImage side_by_side(const PcaVisualization& vis);

void write_pca_visualization(const FeatureMap& lr, const FeatureMap& hr, const std::filesystem::path& path);

}  // namespace featup
