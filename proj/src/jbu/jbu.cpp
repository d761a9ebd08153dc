#include "featup/jbu.hpp"

#include <random>

#include "featup/gemm.hpp"
#include "featup/ops.hpp"
#include "featup/parallel.hpp"
#include "jbu_internal.hpp"

namespace featup {

template <typename T>
JbuParams<T> JbuParams<T>::init(int radius, std::uint64_t seed) {
  if (radius < 1) throw ParameterError("JBU radius must be >= 1");
  JbuParams p;
  p.radius = radius;
  p.log_sigma_spatial = Tensor<T>({1});
  p.log_sigma_range_sq = Tensor<T>({1});
  p.w1 = Tensor<T>({3, kRangeHidden});
  p.b1 = Tensor<T>({kRangeHidden});
  p.w2 = Tensor<T>({kRangeHidden, kRangeDim});
  p.b2 = Tensor<T>({kRangeDim});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& v : p.w1.storage()) v = static_cast<T>(normal(rng));
  for (auto& v : p.w2.storage()) v = static_cast<T>(normal(rng));
  return p;
}

template <typename T>
T JbuParams<T>::sigma_spatial() const {
  return static_cast<T>(std::exp(static_cast<double>(log_sigma_spatial[0])));
}

template <typename T>
T JbuParams<T>::sigma_range_sq() const {
  return static_cast<T>(std::exp(static_cast<double>(log_sigma_range_sq[0])));
}

template <typename T>
void JbuParams<T>::set_sigma_spatial(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("sigma_spatial must be positive");
  log_sigma_spatial[0] = static_cast<T>(std::log(sigma));
}

template <typename T>
void JbuParams<T>::set_sigma_range_sq(double tau) {
  if (!(tau > 0.0)) throw ParameterError("sigma_range^2 must be positive");
  log_sigma_range_sq[0] = static_cast<T>(std::log(tau));
}

double spatial_kernel(double sigma_spatial, double y1, double x1, double y2, double x2) {
  const double dy = y1 - y2;
  const double dx = x1 - x2;
  return std::exp(-(dy * dy + dx * dx) / (2.0 * sigma_spatial * sigma_spatial));
}

namespace {

template <typename T>
void check_params(const JbuParams<T>& p) {
  if (p.radius < 1) throw ParameterError("JBU radius must be >= 1");
  auto expect = [](const Tensor<T>& t, std::size_t n, const char* name) {
    if (t.size() != n) {
      throw DimensionError(std::string("JBU parameter ") + name + " has shape " + shape_string(t.shape()));
    }
  };
  expect(p.log_sigma_spatial, 1, "log_sigma_spatial");
  expect(p.log_sigma_range_sq, 1, "log_sigma_range_sq");
  expect(p.w1, 3 * kRangeHidden, "w1");
  expect(p.b1, kRangeHidden, "b1");
  expect(p.w2, kRangeHidden * kRangeDim, "w2");
  expect(p.b2, kRangeDim, "b2");
}

template <typename T>
void embed_rows(const JbuParams<T>& p, const T* rgb, int n, T* pre, T* hidden, T* embed) {
  nn::linear_rows(rgb, n, 3, p.w1.data(), p.b1.data(), kRangeHidden, pre);
  const std::size_t m = static_cast<std::size_t>(n) * kRangeHidden;
  for (std::size_t i = 0; i < m; ++i) hidden[i] = nn::gelu(pre[i]);
  nn::linear_rows(hidden, n, kRangeHidden, p.w2.data(), p.b2.data(), kRangeDim, embed);
}

template <typename T>
inline T lerp_tap(T a, T b, T w) {
  return w == T(0) ? a : (T(1) - w) * a + w * b;
}

}  // namespace

template <typename T>
std::vector<T> range_embedding(const JbuParams<T>& p, std::span<const T> rgb, int n) {
  check_params(p);
  if (rgb.size() != static_cast<std::size_t>(n) * 3) throw DimensionError("range_embedding expects n RGB triples");
  std::vector<T> pre(static_cast<std::size_t>(n) * kRangeHidden), hidden(pre.size()),
      embed(static_cast<std::size_t>(n) * kRangeDim);
  embed_rows(p, rgb.data(), n, pre.data(), hidden.data(), embed.data());
  return embed;
}

template <typename T>
std::vector<T> range_kernel(const JbuParams<T>& p, std::span<const T> patch, int center_index) {
  const int n = p.neighbors();
  if (patch.size() != static_cast<std::size_t>(n) * 3) {
    throw DimensionError("range_kernel expects " + std::to_string(n) + " RGB triples");
  }
  if (center_index < 0 || center_index >= n) throw ParameterError("range_kernel center index out of range");
  auto e = range_embedding(p, patch, n);
  const double tau = p.sigma_range_sq();
  std::vector<double> logit(n);
  double mx = -INFINITY;
  for (int i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int k = 0; k < kRangeDim; ++k) {
      dot += static_cast<double>(e[static_cast<std::size_t>(center_index) * kRangeDim + k]) *
             e[static_cast<std::size_t>(i) * kRangeDim + k];
    }
    logit[i] = dot / tau;
    mx = std::max(mx, logit[i]);
  }
  double total = 0.0;
  for (auto& l : logit) total += (l = std::exp(l - mx));
  std::vector<T> out(n);
  for (int i = 0; i < n; ++i) out[i] = static_cast<T>(logit[i] / total);
  return out;
}

namespace jbu_detail {

template <typename T>
void prepare(JbuContext<T>& ctx, const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
             JbuBackend backend, bool need_features) {
  check_params(p);
  if (guidance.empty()) throw DimensionError("JBU guidance image is empty");
  ctx.backend = backend;
  ctx.radius = p.radius;
  ctx.neighbors = p.neighbors();
  ctx.h = guidance.height();
  ctx.w = guidance.width();
  ctx.params = p;
  ctx.sigma = std::exp(static_cast<double>(p.log_sigma_spatial[0]));
  ctx.tau = std::exp(static_cast<double>(p.log_sigma_range_sq[0]));
  if (!std::isfinite(ctx.sigma) || !std::isfinite(ctx.tau) || ctx.sigma <= 0.0 || ctx.tau <= 0.0) {
    throw NumericError("JBU sigma parameters are not finite and positive");
  }

  const int d = 2 * p.radius + 1;
  ctx.spatial.resize(ctx.neighbors);
  ctx.dist2.resize(ctx.neighbors);
  for (int n = 0; n < ctx.neighbors; ++n) {
    // Offsets are normalized so the patch spans [-1, 1].
    const double dy = static_cast<double>(n / d - p.radius) / p.radius;
    const double dx = static_cast<double>(n % d - p.radius) / p.radius;
    ctx.dist2[n] = dy * dy + dx * dx;
    ctx.spatial[n] = spatial_kernel(ctx.sigma, 0.0, 0.0, dy, dx);
  }

  const int hw = ctx.pixels();
  ctx.rgb.assign(guidance.pixels().begin(), guidance.pixels().end());
  ctx.pre.resize(static_cast<std::size_t>(hw) * kRangeHidden);
  ctx.hidden.resize(ctx.pre.size());
  ctx.embed.resize(static_cast<std::size_t>(hw) * kRangeDim);
  embed_rows(p, ctx.rgb.data(), hw, ctx.pre.data(), ctx.hidden.data(), ctx.embed.data());

  if (!need_features) return;
  if (lr.empty()) throw DimensionError("JBU input features are empty");
  if (lr.height() > ctx.h || lr.width() > ctx.w) {
    throw DimensionError("JBU guidance " + std::to_string(ctx.h) + "x" + std::to_string(ctx.w) +
                         " is smaller than the features " + std::to_string(lr.height()) + "x" +
                         std::to_string(lr.width()));
  }
  ctx.channels = lr.channels();
  ctx.lr_h = lr.height();
  ctx.lr_w = lr.width();
  ctx.rows = resize_plan(ctx.lr_h, ctx.h);
  ctx.cols = resize_plan(ctx.lr_w, ctx.w);
  const int c_n = ctx.channels;
  ctx.u_hwc.resize(static_cast<std::size_t>(hw) * c_n);
  parallel_for(0, ctx.h, [&](std::int64_t y) {
    const AxisTap& ty = ctx.rows[y];
    const T wy = static_cast<T>(ty.w1);
    for (int x = 0; x < ctx.w; ++x) {
      const AxisTap& tx = ctx.cols[x];
      const T wx = static_cast<T>(tx.w1);
      T* dst = ctx.u_hwc.data() + (static_cast<std::size_t>(y) * ctx.w + x) * c_n;
      for (int c = 0; c < c_n; ++c) {
        T top = lerp_tap(lr(c, ty.i0, tx.i0), lr(c, ty.i0, tx.i1), wx);
        T value = top;
        if (wy != T(0)) value = (T(1) - wy) * top + wy * lerp_tap(lr(c, ty.i1, tx.i0), lr(c, ty.i1, tx.i1), wx);
        dst[c] = value;
      }
    }
  });
}

template <typename T>
void pixel_weights(const JbuContext<T>& ctx, const T* ep, const T* const* eq, PixelScratch& s) {
  const int n_nb = ctx.neighbors;
  double mx = -INFINITY;
  for (int n = 0; n < n_nb; ++n) {
    double dot = 0.0;
    for (int k = 0; k < kRangeDim; ++k) dot += static_cast<double>(ep[k]) * eq[n][k];
    s.logit[n] = dot / ctx.tau;
    mx = std::max(mx, s.logit[n]);
  }
  double total = 0.0;
  for (int n = 0; n < n_nb; ++n) total += (s.rho[n] = std::exp(s.logit[n] - mx));
  s.z = 0.0;
  for (int n = 0; n < n_nb; ++n) {
    s.rho[n] /= total;
    s.w[n] = s.rho[n] * ctx.spatial[n];
    s.z += s.w[n];
  }
  for (int n = 0; n < n_nb; ++n) s.w[n] /= s.z;
}

template <typename T>
void pixel_weight_grads(const JbuContext<T>& ctx, PixelScratch& s, double& g_log_sigma, double& g_log_tau) {
  const int n_nb = ctx.neighbors;
  double wdot = 0.0;
  for (int n = 0; n < n_nb; ++n) wdot += s.w[n] * s.gw[n];
  double rdot = 0.0;
  double gsig = 0.0;
  // s.gl temporarily holds d loss / d rho.
  for (int n = 0; n < n_nb; ++n) {
    const double g_unnorm = (s.gw[n] - wdot) / s.z;
    s.gl[n] = g_unnorm * ctx.spatial[n];
    rdot += s.rho[n] * s.gl[n];
    gsig += g_unnorm * s.rho[n] * ctx.spatial[n] * ctx.dist2[n];
  }
  g_log_sigma += gsig / (ctx.sigma * ctx.sigma);
  double gtau = 0.0;
  for (int n = 0; n < n_nb; ++n) {
    s.gl[n] = s.rho[n] * (s.gl[n] - rdot);
    gtau -= s.gl[n] * s.logit[n];
  }
  g_log_tau += gtau;
}

template <typename T>
void embedding_backward(const JbuContext<T>& ctx, const T* d_embed, JbuGradients<T>& grads) {
  const int hw = ctx.pixels();
  const int hd = kRangeHidden;
  JbuParams<T>& gp = grads.params;
  // d hidden = dE * W2^T
  std::vector<T> w2t(static_cast<std::size_t>(hd) * kRangeDim);
  transpose(ctx.params.w2.data(), hd, kRangeDim, w2t.data());
  std::vector<T> dpre(static_cast<std::size_t>(hw) * hd);
  gemm<T>(hw, kRangeDim, hd, d_embed, kRangeDim, w2t.data(), hd, dpre.data(), hd);
  // dW2 = hidden^T dE
  std::vector<T> ht(static_cast<std::size_t>(hd) * hw);
  transpose(ctx.hidden.data(), hw, hd, ht.data());
  gemm<T>(hd, hw, kRangeDim, ht.data(), hw, d_embed, kRangeDim, gp.w2.data(), kRangeDim, nullptr, true);
  for (int i = 0; i < hw; ++i) {
    for (int k = 0; k < kRangeDim; ++k) gp.b2[k] += d_embed[static_cast<std::size_t>(i) * kRangeDim + k];
  }
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= nn::gelu_grad(ctx.pre[i]);
  std::vector<T> rt(static_cast<std::size_t>(3) * hw);
  transpose(ctx.rgb.data(), hw, 3, rt.data());
  gemm<T>(3, hw, hd, rt.data(), hw, dpre.data(), hd, gp.w1.data(), hd, nullptr, true);
  for (int i = 0; i < hw; ++i) {
    for (int k = 0; k < hd; ++k) gp.b1[k] += dpre[static_cast<std::size_t>(i) * hd + k];
  }
}

template <typename T>
BasicFeatureMap<T> upsample_adjoint(const JbuContext<T>& ctx, const scratch_vector<T>& du_hwc) {
  const int c_n = ctx.channels;
  scratch_vector<T> acc(static_cast<std::size_t>(ctx.lr_h) * ctx.lr_w * c_n, T(0));
  for (int y = 0; y < ctx.h; ++y) {
    const AxisTap& ty = ctx.rows[y];
    const T wy1 = static_cast<T>(ty.w1);
    const T wy0 = T(1) - wy1;
    for (int x = 0; x < ctx.w; ++x) {
      const AxisTap& tx = ctx.cols[x];
      const T wx1 = static_cast<T>(tx.w1);
      const T wx0 = T(1) - wx1;
      const T* g = du_hwc.data() + (static_cast<std::size_t>(y) * ctx.w + x) * c_n;
      T* a00 = acc.data() + (static_cast<std::size_t>(ty.i0) * ctx.lr_w + tx.i0) * c_n;
      T* a01 = acc.data() + (static_cast<std::size_t>(ty.i0) * ctx.lr_w + tx.i1) * c_n;
      T* a10 = acc.data() + (static_cast<std::size_t>(ty.i1) * ctx.lr_w + tx.i0) * c_n;
      T* a11 = acc.data() + (static_cast<std::size_t>(ty.i1) * ctx.lr_w + tx.i1) * c_n;
      const T k00 = wy0 * wx0, k01 = wy0 * wx1, k10 = wy1 * wx0, k11 = wy1 * wx1;
      for (int c = 0; c < c_n; ++c) {
        a00[c] += k00 * g[c];
        a01[c] += k01 * g[c];
        a10[c] += k10 * g[c];
        a11[c] += k11 * g[c];
      }
    }
  }
  return hwc_to_map(acc, c_n, ctx.lr_h, ctx.lr_w);
}

template <typename T>
BasicFeatureMap<T> hwc_to_map(const scratch_vector<T>& hwc, int c, int h, int w) {
  BasicFeatureMap<T> out(c, h, w);
  transpose(hwc.data(), h * w, c, out.data().data());
  return out;
}

}  // namespace jbu_detail

namespace {

template <typename T>
BasicFeatureMap<T> jbu_forward_reference(JbuContext<T>& ctx) {
  const int hw = ctx.pixels();
  const int n_nb = ctx.neighbors;
  const int c_n = ctx.channels;
  ctx.u_unfold.resize(static_cast<std::size_t>(hw) * n_nb * c_n);
  ctx.e_unfold.resize(static_cast<std::size_t>(hw) * n_nb * kRangeDim);
  for (int y = 0; y < ctx.h; ++y) {
    for (int x = 0; x < ctx.w; ++x) {
      const int p = y * ctx.w + x;
      for (int n = 0; n < n_nb; ++n) {
        const int q = ctx.neighbor(y, x, n);
        const std::size_t slot = static_cast<std::size_t>(p) * n_nb + n;
        std::copy_n(ctx.u_hwc.data() + static_cast<std::size_t>(q) * c_n, c_n, ctx.u_unfold.data() + slot * c_n);
        std::copy_n(ctx.embed.data() + static_cast<std::size_t>(q) * kRangeDim, kRangeDim,
                    ctx.e_unfold.data() + slot * kRangeDim);
      }
    }
  }
  BasicFeatureMap<T> out(c_n, ctx.h, ctx.w);
  jbu_detail::PixelScratch s(n_nb);
  std::vector<const T*> eq(n_nb);
  std::vector<T> acc(c_n);
  for (int p = 0; p < hw; ++p) {
    for (int n = 0; n < n_nb; ++n) eq[n] = ctx.e_unfold.data() + (static_cast<std::size_t>(p) * n_nb + n) * kRangeDim;
    jbu_detail::pixel_weights(ctx, ctx.embed.data() + static_cast<std::size_t>(p) * kRangeDim, eq.data(), s);
    std::fill(acc.begin(), acc.end(), T(0));
    for (int n = 0; n < n_nb; ++n) {
      const T wn = static_cast<T>(s.w[n]);
      const T* row = ctx.u_unfold.data() + (static_cast<std::size_t>(p) * n_nb + n) * c_n;
      for (int c = 0; c < c_n; ++c) acc[c] += wn * row[c];
    }
    for (int c = 0; c < c_n; ++c) out.channel(c)[p] = acc[c];
  }
  return out;
}

template <typename T>
JbuGradients<T> jbu_backward_reference(const JbuContext<T>& ctx, const BasicFeatureMap<T>& grad_out) {
  const int hw = ctx.pixels();
  const int n_nb = ctx.neighbors;
  const int c_n = ctx.channels;
  const double inv_tau = 1.0 / ctx.tau;
  scratch_vector<T> du_unfold(static_cast<std::size_t>(hw) * n_nb * c_n);
  scratch_vector<T> de_unfold(static_cast<std::size_t>(hw) * n_nb * kRangeDim);
  scratch_vector<T> d_embed(static_cast<std::size_t>(hw) * kRangeDim, T(0));
  std::vector<double> part_sigma(hw), part_tau(hw);
  jbu_detail::PixelScratch s(n_nb);
  std::vector<const T*> eq(n_nb);
  std::vector<T> gp(c_n);
  for (int p = 0; p < hw; ++p) {
    for (int c = 0; c < c_n; ++c) gp[c] = grad_out.channel(c)[p];
    const T* ep = ctx.embed.data() + static_cast<std::size_t>(p) * kRangeDim;
    for (int n = 0; n < n_nb; ++n) eq[n] = ctx.e_unfold.data() + (static_cast<std::size_t>(p) * n_nb + n) * kRangeDim;
    jbu_detail::pixel_weights(ctx, ep, eq.data(), s);
    for (int n = 0; n < n_nb; ++n) {
      const T* row = ctx.u_unfold.data() + (static_cast<std::size_t>(p) * n_nb + n) * c_n;
      double dot = 0.0;
      for (int c = 0; c < c_n; ++c) dot += static_cast<double>(gp[c]) * row[c];
      s.gw[n] = dot;
    }
    part_sigma[p] = 0.0;
    part_tau[p] = 0.0;
    jbu_detail::pixel_weight_grads(ctx, s, part_sigma[p], part_tau[p]);
    T* dep = d_embed.data() + static_cast<std::size_t>(p) * kRangeDim;
    for (int n = 0; n < n_nb; ++n) {
      const std::size_t slot = static_cast<std::size_t>(p) * n_nb + n;
      const T wn = static_cast<T>(s.w[n]);
      T* du = du_unfold.data() + slot * c_n;
      for (int c = 0; c < c_n; ++c) du[c] = wn * gp[c];
      const T coeff = static_cast<T>(s.gl[n] * inv_tau);
      T* de = de_unfold.data() + slot * kRangeDim;
      for (int k = 0; k < kRangeDim; ++k) {
        dep[k] += coeff * eq[n][k];
        de[k] = coeff * ep[k];
      }
    }
  }
  // Fold the unfolded gradients back onto the pixel grid.
  scratch_vector<T> du_hwc(static_cast<std::size_t>(hw) * c_n, T(0));
  for (int y = 0; y < ctx.h; ++y) {
    for (int x = 0; x < ctx.w; ++x) {
      const int p = y * ctx.w + x;
      for (int n = 0; n < n_nb; ++n) {
        const int q = ctx.neighbor(y, x, n);
        const std::size_t slot = static_cast<std::size_t>(p) * n_nb + n;
        const T* du = du_unfold.data() + slot * c_n;
        T* dst = du_hwc.data() + static_cast<std::size_t>(q) * c_n;
        for (int c = 0; c < c_n; ++c) dst[c] += du[c];
        const T* de = de_unfold.data() + slot * kRangeDim;
        T* dq = d_embed.data() + static_cast<std::size_t>(q) * kRangeDim;
        for (int k = 0; k < kRangeDim; ++k) dq[k] += de[k];
      }
    }
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

}  // namespace

template <typename T>
JbuForward<T> jbu_forward(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
                          JbuBackend backend) {
  auto ctx = std::make_shared<JbuContext<T>>();
  jbu_detail::prepare(*ctx, lr, guidance, p, backend, true);
  JbuForward<T> result;
  result.output = backend == JbuBackend::reference ? jbu_forward_reference(*ctx) : jbu_forward_fast(*ctx);
  result.context = std::move(ctx);
  return result;
}

template <typename T>
JbuGradients<T> jbu_backward(const JbuContext<T>& ctx, const BasicFeatureMap<T>& grad_out) {
  if (grad_out.channels() != ctx.channels || grad_out.height() != ctx.h || grad_out.width() != ctx.w) {
    throw DimensionError("JBU backward: gradient shape does not match the forward output");
  }
  return ctx.backend == JbuBackend::reference ? jbu_backward_reference(ctx, grad_out)
                                              : jbu_backward_fast(ctx, grad_out);
}

template <typename T>
BasicFeatureMap<T> jbu_upsample(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance, const JbuParams<T>& p,
                                JbuBackend backend) {
  return jbu_forward(lr, guidance, p, backend).output;
}

template <typename T>
std::vector<T> jbu_weights(const BasicImage<T>& guidance, const JbuParams<T>& p) {
  JbuContext<T> ctx;
  jbu_detail::prepare(ctx, BasicFeatureMap<T>(), guidance, p, JbuBackend::fast, false);
  const int n_nb = ctx.neighbors;
  std::vector<T> out(static_cast<std::size_t>(ctx.pixels()) * n_nb);
  jbu_detail::PixelScratch s(n_nb);
  std::vector<const T*> eq(n_nb);
  for (int y = 0; y < ctx.h; ++y) {
    for (int x = 0; x < ctx.w; ++x) {
      const int p_idx = y * ctx.w + x;
      for (int n = 0; n < n_nb; ++n) {
        eq[n] = ctx.embed.data() + static_cast<std::size_t>(ctx.neighbor(y, x, n)) * kRangeDim;
      }
      jbu_detail::pixel_weights(ctx, ctx.embed.data() + static_cast<std::size_t>(p_idx) * kRangeDim, eq.data(), s);
      for (int n = 0; n < n_nb; ++n) out[static_cast<std::size_t>(p_idx) * n_nb + n] = static_cast<T>(s.w[n]);
    }
  }
  return out;
}

int jbu_stage_count(int lr_h, int lr_w, int hr_h, int hr_w) {
  if (lr_h < 1 || lr_w < 1) throw DimensionError("JBU input features are empty");
  auto fail = [&] {
    throw ParameterError("upsampling " + std::to_string(lr_h) + "x" + std::to_string(lr_w) + " to " +
                         std::to_string(hr_h) + "x" + std::to_string(hr_w) +
                         " is not a power-of-two factor shared by both axes");
  };
  if (hr_h % lr_h != 0 || hr_w % lr_w != 0) fail();
  const int fy = hr_h / lr_h;
  const int fx = hr_w / lr_w;
  if (fy != fx || fy < 1 || (fy & (fy - 1)) != 0) fail();
  int stages = 0;
  for (int f = fy; f > 1; f >>= 1) ++stages;
  return stages;
}

template <typename T>
BasicImage<T> stage_guidance(const BasicImage<T>& guidance, int stage, int stages) {
  const int shift = stages - 1 - stage;
  return area_downscale(guidance, guidance.height() >> shift, guidance.width() >> shift);
}

template <typename T>
BasicFeatureMap<T> jbu_stack(const BasicFeatureMap<T>& lr, const BasicImage<T>& guidance,
                             std::span<const JbuParams<T>> stages, JbuBackend backend) {
  const int n = jbu_stage_count(lr.height(), lr.width(), guidance.height(), guidance.width());
  if (static_cast<int>(stages.size()) != n) {
    throw ParameterError("JBU stack needs " + std::to_string(n) + " stages for this factor, got " +
                         std::to_string(stages.size()));
  }
  BasicFeatureMap<T> current = lr;
  for (int s = 0; s < n; ++s) current = jbu_upsample(current, stage_guidance(guidance, s, n), stages[s], backend);
  return current;
}

namespace ad {

template <typename T>
JbuVars jbu_parameters(Tape<T>& tape, const JbuParams<T>& p, const std::string& prefix) {
  JbuVars v;
  v.radius = p.radius;
  v.log_sigma_spatial = tape.parameter(prefix + "log_sigma_spatial", p.log_sigma_spatial);
  v.log_sigma_range_sq = tape.parameter(prefix + "log_sigma_range_sq", p.log_sigma_range_sq);
  v.w1 = tape.parameter(prefix + "w1", p.w1);
  v.b1 = tape.parameter(prefix + "b1", p.b1);
  v.w2 = tape.parameter(prefix + "w2", p.w2);
  v.b2 = tape.parameter(prefix + "b2", p.b2);
  return v;
}

template <typename T>
Var jbu_upsample(Tape<T>& tape, Var lr, const BasicImage<T>& guidance, const JbuVars& v, JbuBackend backend) {
  JbuParams<T> p;
  p.radius = v.radius;
  p.log_sigma_spatial = tape.value(v.log_sigma_spatial);
  p.log_sigma_range_sq = tape.value(v.log_sigma_range_sq);
  p.w1 = tape.value(v.w1);
  p.b1 = tape.value(v.b1);
  p.w2 = tape.value(v.w2);
  p.b2 = tape.value(v.b2);
  const Tensor<T>& lv = tape.value(lr);
  if (lv.rank() != 3) throw DimensionError("JBU expects C x H x W features, got " + shape_string(lv.shape()));
  auto fwd = jbu_forward(lv.to_feature_map(), guidance, p, backend);
  auto ctx = fwd.context;
  return tape.record(Tensor<T>::from_feature_map(std::move(fwd.output)),
                     {lr, v.log_sigma_spatial, v.log_sigma_range_sq, v.w1, v.b1, v.w2, v.b2},
                     [lr, v, ctx](Tape<T>& t, int self) {
                       auto grads = jbu_backward(*ctx, t.grad_of(self).to_feature_map());
                       auto add = [&t](Var dst, const std::vector<T>& src) {
                         if (!t.requires_grad(dst)) return;
                         Tensor<T>& g = t.grad_sink(dst);
                         for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
                       };
                       add(lr, grads.features.storage());
                       add(v.log_sigma_spatial, grads.params.log_sigma_spatial.storage());
                       add(v.log_sigma_range_sq, grads.params.log_sigma_range_sq.storage());
                       add(v.w1, grads.params.w1.storage());
                       add(v.b1, grads.params.b1.storage());
                       add(v.w2, grads.params.w2.storage());
                       add(v.b2, grads.params.b2.storage());
                     });
}

template <typename T>
Var jbu_stack(Tape<T>& tape, Var lr, const BasicImage<T>& guidance, std::span<const JbuVars> stages,
              JbuBackend backend) {
  const Tensor<T>& lv = tape.value(lr);
  if (lv.rank() != 3) throw DimensionError("JBU expects C x H x W features, got " + shape_string(lv.shape()));
  const int n = jbu_stage_count(lv.dim(1), lv.dim(2), guidance.height(), guidance.width());
  if (static_cast<int>(stages.size()) != n) {
    throw ParameterError("JBU stack needs " + std::to_string(n) + " stages for this factor, got " +
                         std::to_string(stages.size()));
  }
  Var current = lr;
  for (int s = 0; s < n; ++s) current = jbu_upsample(tape, current, stage_guidance(guidance, s, n), stages[s], backend);
  return current;
}

}  // namespace ad

#define FEATUP_INSTANTIATE(T)                                                                                    \
  template struct JbuParams<T>;                                                                                 \
  template std::vector<T> range_embedding(const JbuParams<T>&, std::span<const T>, int);                        \
  template std::vector<T> range_kernel(const JbuParams<T>&, std::span<const T>, int);                           \
  template void jbu_detail::prepare(JbuContext<T>&, const BasicFeatureMap<T>&, const BasicImage<T>&,            \
                                    const JbuParams<T>&, JbuBackend, bool);                                     \
  template void jbu_detail::pixel_weights(const JbuContext<T>&, const T*, const T* const*, PixelScratch&);      \
  template void jbu_detail::pixel_weight_grads(const JbuContext<T>&, PixelScratch&, double&, double&);          \
  template void jbu_detail::embedding_backward(const JbuContext<T>&, const T*, JbuGradients<T>&);               \
  template BasicFeatureMap<T> jbu_detail::upsample_adjoint(const JbuContext<T>&, const scratch_vector<T>&);     \
  template BasicFeatureMap<T> jbu_detail::hwc_to_map(const scratch_vector<T>&, int, int, int);                  \
  template JbuForward<T> jbu_forward(const BasicFeatureMap<T>&, const BasicImage<T>&, const JbuParams<T>&,      \
                                     JbuBackend);                                                               \
  template JbuGradients<T> jbu_backward(const JbuContext<T>&, const BasicFeatureMap<T>&);                       \
  template BasicFeatureMap<T> jbu_upsample(const BasicFeatureMap<T>&, const BasicImage<T>&,                     \
                                           const JbuParams<T>&, JbuBackend);                                    \
  template std::vector<T> jbu_weights(const BasicImage<T>&, const JbuParams<T>&);                               \
  template BasicImage<T> stage_guidance(const BasicImage<T>&, int, int);                                        \
  template BasicFeatureMap<T> jbu_stack(const BasicFeatureMap<T>&, const BasicImage<T>&,                        \
                                        std::span<const JbuParams<T>>, JbuBackend);                             \
  template ad::JbuVars ad::jbu_parameters<T>(ad::Tape<T>&, const JbuParams<T>&, const std::string&);            \
  template ad::Var ad::jbu_upsample<T>(ad::Tape<T>&, ad::Var, const BasicImage<T>&, const ad::JbuVars&,         \
                                       JbuBackend);                                                             \
  template ad::Var ad::jbu_stack<T>(ad::Tape<T>&, ad::Var, const BasicImage<T>&, std::span<const ad::JbuVars>,  \
                                    JbuBackend);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
