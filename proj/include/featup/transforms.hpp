#pragma once

#include <cstdint>
#include <string>

#include "featup/sampling.hpp"
#include "featup/tape.hpp"
#include "featup/tensor.hpp"

namespace featup {

/// A pad -> zoom/crop -> horizontal flip jitter.
///
/// Pixel quantities are expressed on the reference grid (the image the
/// transform was sampled for). Applying the transform to a map of another
/// resolution scales them proportionally, so the image and its features are
/// warped over the same normalized region. The output always covers a window
/// the size of the reference image.
struct JitterTransform {
  int ref_height = 1;
  int ref_width = 1;
  int pad_left = 0;
  int pad_right = 0;
  int pad_top = 0;
  int pad_bottom = 0;
  double zoom = 1.0;
  double crop_offset_y = 0.0;  // in zoomed reference pixels
  double crop_offset_x = 0.0;
  bool hflip = false;

  static JitterTransform identity(int ref_height, int ref_width);

  bool is_identity() const;
  /// Throws ParameterError if any field is out of range.
  void validate() const;
  /// Stable 16-hex-digit digest of all fields; names view files on disk.
  std::string hash() const;

  bool operator==(const JitterTransform&) const = default;
};

/// Uniform pads in [0, max_pad], zoom in [1, max_zoom], fair-coin flip and a
/// uniform integer crop offset inside the zoomed canvas. Pure in `seed`.
JitterTransform sample_transform(std::uint64_t seed, int max_pad, double max_zoom, int ref_height, int ref_width);

struct TransformPlan {
  AxisPlan rows;
  AxisPlan cols;
};

/// Bilinear taps that realize `t` on an in_h x in_w map producing out_h x out_w.
TransformPlan transform_plan(const JitterTransform& t, int in_h, int in_w, int out_h, int out_w);

template <typename T>
BasicFeatureMap<T> apply_transform(const JitterTransform& t, const BasicFeatureMap<T>& fm, int out_h, int out_w);

/// Jitters an image onto its own reference grid.
GuidanceImage apply_transform(const JitterTransform& t, const GuidanceImage& image);

namespace ad {

/// Differentiable apply_transform on a C x H x W tape value.
template <typename T>
Var apply_transform(Tape<T>& tape, Var fm, const JitterTransform& t, int out_h, int out_w);

}  // namespace ad

}  // namespace featup
