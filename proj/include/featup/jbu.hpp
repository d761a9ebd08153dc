#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "featup/tape.hpp"
#include "featup/tensor.hpp"

namespace featup {

inline constexpr int kRangeHidden = 30;
inline constexpr int kRangeDim = 30;

enum class JbuBackend { reference, fast };

/// One joint bilateral upsampling stage.
///
/// sigma_spatial and sigma_range^2 are stored as logarithms so that plain
/// gradient steps keep them positive. The range MLP maps an RGB guidance pixel
/// to a kRangeDim embedding: Linear(3, 30) -> GeLU -> Linear(30, 30).
template <typename T>
struct JbuParams {
  int radius = 1;
  Tensor<T> log_sigma_spatial;   // 1
  Tensor<T> log_sigma_range_sq;  // 1
  Tensor<T> w1;                  // 3 x 30
  Tensor<T> b1;                  // 30
  Tensor<T> w2;                  // 30 x 30
  Tensor<T> b2;                  // 30

  /// sigma_spatial = sigma_range^2 = 1, MLP weights N(0, 0.02^2), zero biases.
  static JbuParams init(int radius, std::uint64_t seed);

  T sigma_spatial() const;
  T sigma_range_sq() const;
  void set_sigma_spatial(double sigma);
  void set_sigma_range_sq(double tau);
  int neighbors() const { return (2 * radius + 1) * (2 * radius + 1); }

  template <typename F>
  void visit(F&& f) {
    f("log_sigma_spatial", log_sigma_spatial);
    f("log_sigma_range_sq", log_sigma_range_sq);
    f("w1", w1);
    f("b1", b1);
    f("w2", w2);
    f("b2", b2);
  }
  template <typename F>
  void visit(F&& f) const {
    f("log_sigma_spatial", log_sigma_spatial);
    f("log_sigma_range_sq", log_sigma_range_sq);
    f("w1", w1);
    f("b1", b1);
    f("w2", w2);
    f("b2", b2);
  }

  template <typename U>
  JbuParams<U> cast() const {
    return {radius,
            log_sigma_spatial.template cast<U>(),
            log_sigma_range_sq.template cast<U>(),
            w1.template cast<U>(),
            b1.template cast<U>(),
            w2.template cast<U>(),
            b2.template cast<U>()};
  }
};

/// Gaussian on the Euclidean distance between two normalized (y, x) points.
double spatial_kernel(double sigma_spatial, double y1, double x1, double y2, double x2);

/// Range-MLP embeddings of `n` RGB triples: n x kRangeDim.
template <typename T>
std::vector<T> range_embedding(const JbuParams<T>& p, std::span<const T> rgb, int n);

/// Softmax over the patch of <E(center), E(neighbor)> / sigma_range^2.
/// `patch` holds N = (2r+1)^2 RGB triples in row-major window order.
template <typename T>
std::vector<T> range_kernel(const JbuParams<T>& p, std::span<const T> patch, int center_index);

template <typename T>
struct JbuContext;

/// Forward result plus whatever the backward pass needs.
template <typename T>
struct JbuForward {
  BasicFeatureMap<T> output;
  std::shared_ptr<JbuContext<T>> context;
};

template <typename T>
struct JbuGradients {
  BasicFeatureMap<T> features;  // d loss / d F_lr
  JbuParams<T> params;          // same layout as the parameters
};

/// Upsamples `lr` to the guidance resolution. Each output pixel blends the
/// bilinearly upsampled features of its (2r+1)^2 clamped neighbors with
/// weights proportional to k_range * k_spatial, normalized to sum to 1.
template <typename T>
BasicFeatureMap<T> jbu_upsample(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
                                JbuBackend backend = JbuBackend::fast);

template <typename T>
JbuForward<T> jbu_forward(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
                          JbuBackend backend);

template <typename T>
JbuGradients<T> jbu_backward(const JbuContext<T>& ctx, const BasicFeatureMap<T>& grad_out);

/// Normalized per-pixel blend weights, H*W blocks of N.
template <typename T>
std::vector<T> jbu_weights(const BasicImage<T>& guidance, const JbuParams<T>& p);

/// Number of 2x stages between two resolutions; throws ParameterError unless
/// both axes grow by the same power of two.
int jbu_stage_count(int lr_h, int lr_w, int hr_h, int hr_w);

/// Guidance for stage `stage` of `stages`: area-downscaled to that stage's output size.
template <typename T>
BasicImage<T> stage_guidance(const BasicImage<T>& guidance, int stage, int stages);

template <typename T>
BasicFeatureMap<T> jbu_stack(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance,
                             std::span<const JbuParams<T>> stages, JbuBackend backend = JbuBackend::fast);

namespace ad {

struct JbuVars {
  int radius = 1;
  Var log_sigma_spatial, log_sigma_range_sq, w1, b1, w2, b2;
};

template <typename T>
JbuVars jbu_parameters(Tape<T>& tape, const JbuParams<T>& p, const std::string& prefix);

/// `lr` is C x h x w; the guidance is fixed data.
template <typename T>
Var jbu_upsample(Tape<T>& tape, Var lr, const BasicImage<T>& guidance, const JbuVars& p, JbuBackend backend);

template <typename T>
Var jbu_stack(Tape<T>& tape, Var lr, const BasicImage<T>& guidance, std::span<const JbuVars> stages,
              JbuBackend backend);

}  // namespace ad
}  // namespace featup
