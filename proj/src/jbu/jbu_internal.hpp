#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "featup/jbu.hpp"
#include "featup/memory.hpp"
#include "featup/sampling.hpp"

namespace featup {

template <typename T>
struct JbuContext {
  JbuBackend backend = JbuBackend::fast;
  int radius = 1;
  int neighbors = 9;
  int channels = 0, lr_h = 0, lr_w = 0, h = 0, w = 0;
  JbuParams<T> params;
  double sigma = 1.0;
  double tau = 1.0;
  std::vector<double> spatial;  // N
  std::vector<double> dist2;    // N, squared normalized offsets
  AxisPlan rows, cols;          // lr -> guidance resolution

  scratch_vector<T> rgb;     // HW x 3
  scratch_vector<T> pre;     // HW x 30, MLP hidden pre-activation
  scratch_vector<T> hidden;  // HW x 30
  scratch_vector<T> embed;   // HW x 30
  scratch_vector<T> u_hwc;   // HW x C bilinear upsample of lr

  // Reference backend only: materialized neighborhoods.
  scratch_vector<T> u_unfold;  // HW x N x C
  scratch_vector<T> e_unfold;  // HW x N x 30

  int pixels() const { return h * w; }
  int neighbor(int y, int x, int n) const {
    const int d = 2 * radius + 1;
    const int yy = std::clamp(y + n / d - radius, 0, h - 1);
    const int xx = std::clamp(x + n % d - radius, 0, w - 1);
    return yy * w + xx;
  }
};

namespace jbu_detail {

/// Fills everything but the backend-specific buffers.
template <typename T>
void prepare(JbuContext<T>& ctx, const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
             JbuBackend backend, bool need_features);

/// Per-pixel kernel math in double: logits, softmax, spatial product, normalization.
struct PixelScratch {
  std::vector<double> logit, rho, w, gw, gl;
  double z = 0.0;
  explicit PixelScratch(int n) : logit(n), rho(n), w(n), gw(n), gl(n) {}
};

template <typename T>
void pixel_weights(const JbuContext<T>& ctx, const T* ep, const T* const* eq, PixelScratch& s);

/// From s.gw (d loss / d w_n) to s.gl (d loss / d logit_n) plus the
/// log-sigma and log-tau partials of this pixel.
template <typename T>
void pixel_weight_grads(const JbuContext<T>& ctx, PixelScratch& s, double& g_log_sigma, double& g_log_tau);

/// MLP backward from d loss / d embeddings; writes into grads.params.
template <typename T>
void embedding_backward(const JbuContext<T>& ctx, const T* d_embed, JbuGradients<T>& grads);

/// Adjoint of the lr -> HWC upsample.
template <typename T>
BasicFeatureMap<T> upsample_adjoint(const JbuContext<T>& ctx, const scratch_vector<T>& du_hwc);

template <typename T>
BasicFeatureMap<T> hwc_to_map(const scratch_vector<T>& hwc, int c, int h, int w);

}  // namespace jbu_detail

template <typename T>
BasicFeatureMap<T> jbu_forward_fast(JbuContext<T>& ctx);
template <typename T>
JbuGradients<T> jbu_backward_fast(const JbuContext<T>& ctx, const BasicFeatureMap<T>& grad_out);

}  // namespace featup
