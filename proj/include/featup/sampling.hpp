#pragma once

#include <span>
#include <vector>

#include "featup/tensor.hpp"

namespace featup {

// Normalized coordinates follow the align-corners-false convention: -1 and +1
// lie on the outer edges of the first and last pixels, so pixel i has its
// center at (2i+1)/n - 1.
constexpr double normalized_to_pixel(double u, int n) { return ((u + 1.0) * n - 1.0) * 0.5; }
constexpr double pixel_to_normalized(int i, int n) { return (2.0 * i + 1.0) / n - 1.0; }

/// Two-tap linear interpolation along one axis: (1-w1)*v[i0] + w1*v[i1].
struct AxisTap {
  int i0 = 0;
  int i1 = 0;
  double w1 = 0.0;
};

using AxisPlan = std::vector<AxisTap>;

/// Tap for a pixel-center coordinate with clamp-to-edge borders.
AxisTap clamp_tap(double pixel, int n);

/// Plan for resizing an axis of `in_n` pixels to `out_n` pixels.
AxisPlan resize_plan(int in_n, int out_n);

/// Separable bilinear resampling of every channel.
template <typename T>
BasicFeatureMap<T> resample(const BasicFeatureMap<T>& in, const AxisPlan& rows, const AxisPlan& cols);

/// Transpose of `resample`: scatters output gradients back to an in_h x in_w grid.
template <typename T>
BasicFeatureMap<T> resample_adjoint(const BasicFeatureMap<T>& grad_out, const AxisPlan& rows, const AxisPlan& cols,
                                    int in_h, int in_w);

template <typename T>
BasicFeatureMap<T> bilinear_resize(const BasicFeatureMap<T>& in, int out_h, int out_w);

/// Bilinear blend of the four feature vectors around normalized (y, x).
template <typename T>
void bilinear_sample_into(const BasicFeatureMap<T>& fm, double y, double x, std::span<T> out);

std::vector<float> bilinear_sample(const FeatureMap& fm, double y, double x);

/// Box-average downscale by integer factors; used for guidance pyramids.
template <typename T>
BasicImage<T> area_downscale(const BasicImage<T>& image, int out_h, int out_w);

template <typename T>
BasicImage<T> bilinear_resize(const BasicImage<T>& image, int out_h, int out_w);

}  // namespace featup
