#include "featup/viz.hpp"

#include <algorithm>
#include <limits>

#include "featup/io.hpp"

namespace featup {

namespace {

GuidanceImage to_rgb(const FeatureMap& coords, const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
  GuidanceImage img(coords.height(), coords.width());
  for (int k = 0; k < 3; ++k) {
    const double range = hi[k] - lo[k];
    for (int y = 0; y < coords.height(); ++y) {
      for (int x = 0; x < coords.width(); ++x) {
        const double v = range > 0.0 ? (coords(k, y, x) - lo[k]) / range : 0.5;
        img(y, x, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

PcaVisualization pca_visualize(const FeatureMap& lr, const FeatureMap& hr) {
  if (lr.empty() || hr.empty()) throw DimensionError("visualization needs two nonempty feature maps");
  if (lr.channels() != hr.channels()) {
    throw DimensionError("visualized maps have " + std::to_string(lr.channels()) + " and " +
                         std::to_string(hr.channels()) + " channels");
  }
  if (lr.channels() < 3) throw DimensionError("visualization needs at least 3 channels");
  PcaVisualization v;
  v.pca = pca_fit(lr, 3);
  v.lr_coords = v.pca.project(lr);
  v.hr_coords = v.pca.project(hr);
  for (int k = 0; k < 3; ++k) {
    auto ch = v.lr_coords.channel(k);
    const auto [mn, mx] = std::minmax_element(ch.begin(), ch.end());
    v.lo[k] = *mn;
    v.hi[k] = *mx;
  }
  v.lr_rgb = to_rgb(v.lr_coords, v.lo, v.hi);
  v.hr_rgb = to_rgb(v.hr_coords, v.lo, v.hi);
  return v;
}

GuidanceImage side_by_side(const PcaVisualization& vis) {
  const int h = vis.hr_rgb.height();
  const int w = vis.hr_rgb.width();
  const int lh = vis.lr_rgb.height();
  const int lw = vis.lr_rgb.width();
  GuidanceImage out(h, 2 * w);
  for (int y = 0; y < h; ++y) {
    const int sy = static_cast<int>(static_cast<long long>(y) * lh / h);
    for (int x = 0; x < w; ++x) {
      const int sx = static_cast<int>(static_cast<long long>(x) * lw / w);
      for (int k = 0; k < 3; ++k) {
        out(y, x, k) = vis.lr_rgb(sy, sx, k);
        out(y, w + x, k) = vis.hr_rgb(y, x, k);
      }
    }
  }
  return out;
}

void write_pca_visualization(const FeatureMap& lr, const FeatureMap& hr, const std::filesystem::path& path) {
  write_png(side_by_side(pca_visualize(lr, hr)), path);
}

}  // namespace featup
