#include "featup/gemm.hpp"
#include "featup/parallel.hpp"
#include "jbu_internal.hpp"

namespace featup {

// Fused backend: neighborhoods are read in place from an HWC copy of the
// upsampled features, so the transient footprint is O(HW*C) instead of
// O(HW*N*C). The per-pixel arithmetic is shared with the reference path.

template <typename T>
BasicFeatureMap<T> jbu_forward_fast(JbuContext<T>& ctx) {
  const int n_nb = ctx.neighbors;
  const int c_n = ctx.channels;
  scratch_vector<T> out_hwc(static_cast<std::size_t>(ctx.pixels()) * c_n, T(0));
  parallel_for(0, ctx.h, [&](std::int64_t y) {
    jbu_detail::PixelScratch s(n_nb);
    std::vector<const T*> eq(n_nb);
    std::vector<int> q(n_nb);
    for (int x = 0; x < ctx.w; ++x) {
      const int p = static_cast<int>(y) * ctx.w + x;
      for (int n = 0; n < n_nb; ++n) {
        q[n] = ctx.neighbor(static_cast<int>(y), x, n);
        eq[n] = ctx.embed.data() + static_cast<std::size_t>(q[n]) * kRangeDim;
      }
      jbu_detail::pixel_weights(ctx, ctx.embed.data() + static_cast<std::size_t>(p) * kRangeDim, eq.data(), s);
      T* acc = out_hwc.data() + static_cast<std::size_t>(p) * c_n;
      for (int n = 0; n < n_nb; ++n) {
        const T wn = static_cast<T>(s.w[n]);
        const T* row = ctx.u_hwc.data() + static_cast<std::size_t>(q[n]) * c_n;
        for (int c = 0; c < c_n; ++c) acc[c] += wn * row[c];
      }
    }
  });
  return jbu_detail::hwc_to_map(out_hwc, c_n, ctx.h, ctx.w);
}

template <typename T>
JbuGradients<T> jbu_backward_fast(const JbuContext<T>& ctx, const BasicFeatureMap<T>& grad_out) {
  const int hw = ctx.pixels();
  const int n_nb = ctx.neighbors;
  const int c_n = ctx.channels;
  const double inv_tau = 1.0 / ctx.tau;

  scratch_vector<T> g_hwc(static_cast<std::size_t>(hw) * c_n);
  transpose(grad_out.data().data(), c_n, hw, g_hwc.data());
  scratch_vector<T> du_hwc(static_cast<std::size_t>(hw) * c_n, T(0));
  scratch_vector<T> d_embed(static_cast<std::size_t>(hw) * kRangeDim, T(0));
  std::vector<double> part_sigma(hw, 0.0), part_tau(hw, 0.0);

  // Row bands at least 2r tall: a band scatters into at most r rows on either
  // side, so bands of equal parity never touch the same memory. Even bands run
  // first, then odd ones; the band size is fixed, so the accumulation order
  // (and thus every bit) is independent of the thread count.
  const int band = std::max(2 * ctx.radius, 4);
  const int bands = (ctx.h + band - 1) / band;
  for (int parity = 0; parity < 2; ++parity) {
    const int count = (bands - parity + 1) / 2;
    parallel_for(0, count, [&](std::int64_t i) {
      const int b = static_cast<int>(2 * i + parity);
      jbu_detail::PixelScratch s(n_nb);
      std::vector<const T*> eq(n_nb);
      std::vector<int> q(n_nb);
      const int y_end = std::min(ctx.h, (b + 1) * band);
      for (int y = b * band; y < y_end; ++y) {
        for (int x = 0; x < ctx.w; ++x) {
          const int p = y * ctx.w + x;
          for (int n = 0; n < n_nb; ++n) {
            q[n] = ctx.neighbor(y, x, n);
            eq[n] = ctx.embed.data() + static_cast<std::size_t>(q[n]) * kRangeDim;
          }
          const T* ep = ctx.embed.data() + static_cast<std::size_t>(p) * kRangeDim;
          jbu_detail::pixel_weights(ctx, ep, eq.data(), s);
          const T* gp = g_hwc.data() + static_cast<std::size_t>(p) * c_n;
          for (int n = 0; n < n_nb; ++n) {
            const T* row = ctx.u_hwc.data() + static_cast<std::size_t>(q[n]) * c_n;
            double dot = 0.0;
            for (int c = 0; c < c_n; ++c) dot += static_cast<double>(gp[c]) * row[c];
            s.gw[n] = dot;
          }
          jbu_detail::pixel_weight_grads(ctx, s, part_sigma[p], part_tau[p]);
          T* dep = d_embed.data() + static_cast<std::size_t>(p) * kRangeDim;
          for (int n = 0; n < n_nb; ++n) {
            const T wn = static_cast<T>(s.w[n]);
            T* du = du_hwc.data() + static_cast<std::size_t>(q[n]) * c_n;
            for (int c = 0; c < c_n; ++c) du[c] += wn * gp[c];
            const T coeff = static_cast<T>(s.gl[n] * inv_tau);
            T* deq = d_embed.data() + static_cast<std::size_t>(q[n]) * kRangeDim;
            for (int k = 0; k < kRangeDim; ++k) {
              dep[k] += coeff * eq[n][k];
              deq[k] += coeff * ep[k];
            }
          }
        }
      }
    });
  }

  JbuGradients<T> grads;
  grads.params = ctx.params;
  grads.params.visit([](const char*, Tensor<T>& t) { t.fill(T(0)); });
  double gs = 0.0, gt = 0.0;
  for (int p = 0; p < hw; ++p) {
    gs += part_sigma[p];
    gt += part_tau[p];
  }
  grads.params.log_sigma_spatial[0] = static_cast<T>(gs);
  grads.params.log_sigma_range_sq[0] = static_cast<T>(gt);
  jbu_detail::embedding_backward(ctx, d_embed.data(), grads);
  grads.features = jbu_detail::upsample_adjoint(ctx, du_hwc);
  return grads;
}

template BasicFeatureMap<float> jbu_forward_fast(JbuContext<float>&);
template BasicFeatureMap<double> jbu_forward_fast(JbuContext<double>&);
template JbuGradients<float> jbu_backward_fast(const JbuContext<float>&, const BasicFeatureMap<float>&);
template JbuGradients<double> jbu_backward_fast(const JbuContext<double>&, const BasicFeatureMap<double>&);

}  // namespace featup
