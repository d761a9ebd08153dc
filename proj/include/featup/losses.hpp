#pragma once

#include <span>
#include <vector>

#include "featup/tape.hpp"
#include "featup/tensor.hpp"

namespace featup {

/// Lower bound on the predicted per-pixel scale; keeps log(s) and 1/s^2 finite.
inline constexpr double kMinUncertainty = 1e-3;

/// Gaussian-likelihood reconstruction loss with a per-pixel scale:
/// mean over pixels of |pred - obs|^2 / (2 s^2) + log s, where |.| is the
/// channel norm at that pixel.
template <typename T>
double reconstruction_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& obs, std::span<const T> scale);

/// Total variation of the per-pixel channel-norm magnitudes: squared
/// differences to the upper and left neighbor, summed over valid pairs.
template <typename T>
double tv_loss(const BasicFeatureMap<T>& fm);

/// Linear map from observed feature channels to a per-pixel scale, through
/// kMinUncertainty + softplus.
template <typename T>
struct UncertaintyParams {
  Tensor<T> w;  // C x 1
  Tensor<T> b;  // 1

  /// Zero weights and a bias giving a scale of exactly 1 everywhere.
  static UncertaintyParams init(int channels);
  /// Per-pixel scale for a C x H x W observation.
  std::vector<T> scale(const BasicFeatureMap<T>& obs) const;

  template <typename F>
  void visit(F&& f) {
    f("w", w);
    f("b", b);
  }
  template <typename F>
  void visit(F&& f) const {
    f("w", w);
    f("b", b);
  }
  template <typename U>
  UncertaintyParams<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
};

namespace ad {

/// `pred`, `obs`: C x H x W; `scale`: H*W values (any shape).
template <typename T>
Var reconstruction_loss(Tape<T>& tape, Var pred, Var obs, Var scale);

template <typename T>
Var tv_loss(Tape<T>& tape, Var fm);

/// Per-pixel scale from observed features: kMinUncertainty + softplus(rows * w + b).
/// `obs_rows` is (H*W) x C, `w` is C x 1, `b` has one element.
template <typename T>
Var uncertainty(Tape<T>& tape, Var obs_rows, Var w, Var b);

}  // namespace ad
}  // namespace featup
