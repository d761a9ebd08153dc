#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "featup/tensor.hpp"
#include "featup/transforms.hpp"

namespace featup {

/// Source of low-resolution backbone features for jittered copies of one image.
class ViewProvider {
 public:
  virtual ~ViewProvider() = default;

  /// Features of the image under `t`; throws ParameterError naming `t` when absent.
  virtual FeatureMap view(const JitterTransform& t) const = 0;
  /// Every transform with a stored view, in a stable order.
  virtual std::vector<JitterTransform> transforms() const = 0;
  /// Seed the stored jitter set was drawn with, if known.
  virtual std::optional<std::uint64_t> view_seed() const { return std::nullopt; }
};

/// Human-readable transform fields for diagnostics.
std::string describe(const JitterTransform& t);

/// Identity followed by count-1 transforms drawn with derive_seed(view_seed, i).
std::vector<JitterTransform> jitter_set(std::uint64_t view_seed, int count, int max_pad, double max_zoom,
                                        int ref_height, int ref_width);

class MemoryViewProvider : public ViewProvider {
 public:
  void add(const JitterTransform& t, FeatureMap features);
  void set_view_seed(std::uint64_t seed) { seed_ = seed; }

  FeatureMap view(const JitterTransform& t) const override;
  std::vector<JitterTransform> transforms() const override { return order_; }
  std::optional<std::uint64_t> view_seed() const override { return seed_; }

 private:
  std::vector<JitterTransform> order_;
  std::map<std::string, FeatureMap> views_;
  std::optional<std::uint64_t> seed_;
};

/// Separable Gaussian blur of every channel with clamp-to-edge borders and a
/// kernel radius of ceil(3 sigma).
FeatureMap gaussian_blur(const FeatureMap& fm, double sigma);

/// Box average over factor x factor cells.
FeatureMap area_pool(const FeatureMap& fm, int factor);

inline constexpr double kViewBlurSigma = 2.0;

/// Stand-in backbone: transform a high-resolution map onto its own grid, blur, then pool by `factor`.
FeatureMap render_view(const FeatureMap& hr, const JitterTransform& t, int factor, double blur_sigma = kViewBlurSigma);

/// Renders views on demand from a known high-resolution map.
class SyntheticViewProvider : public ViewProvider {
 public:
  SyntheticViewProvider(FeatureMap ground_truth, int factor, std::vector<JitterTransform> transforms,
                        std::optional<std::uint64_t> seed = std::nullopt);

  FeatureMap view(const JitterTransform& t) const override;
  std::vector<JitterTransform> transforms() const override { return transforms_; }
  std::optional<std::uint64_t> view_seed() const override { return seed_; }

 private:
  FeatureMap truth_;
  int factor_;
  std::vector<JitterTransform> transforms_;
  std::optional<std::uint64_t> seed_;
};

}  // namespace featup
