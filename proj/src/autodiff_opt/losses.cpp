#include "featup/losses.hpp"

#include <cmath>

#include "featup/gemm.hpp"
#include "featup/ops.hpp"

namespace featup {

template <typename T>
double reconstruction_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& obs, std::span<const T> scale) {
  if (!pred.same_shape(obs)) throw DimensionError("reconstruction_loss: prediction and observation shapes differ");
  const int n = pred.plane();
  if (scale.size() != static_cast<std::size_t>(n)) throw DimensionError("reconstruction_loss: one scale per pixel");
  double total = 0.0;
  for (int p = 0; p < n; ++p) {
    double sq = 0.0;
    for (int c = 0; c < pred.channels(); ++c) {
      const double r = static_cast<double>(pred.channel(c)[p]) - obs.channel(c)[p];
      sq += r * r;
    }
    const double s = scale[p];
    total += sq / (2.0 * s * s) + std::log(s);
  }
  return total / n;
}

template <typename T>
double tv_loss(const BasicFeatureMap<T>& fm) {
  if (fm.empty()) throw DimensionError("tv_loss on an empty map");
  const int h = fm.height();
  const int w = fm.width();
  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  for (int p = 0; p < h * w; ++p) {
    double sq = 0.0;
    for (int c = 0; c < fm.channels(); ++c) sq += static_cast<double>(fm.channel(c)[p]) * fm.channel(c)[p];
    mag[p] = std::sqrt(sq);
  }
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = mag[static_cast<std::size_t>(y) * w + x];
      if (y > 0) {
        const double d = m - mag[static_cast<std::size_t>(y - 1) * w + x];
        total += d * d;
      }
      if (x > 0) {
        const double d = m - mag[static_cast<std::size_t>(y) * w + x - 1];
        total += d * d;
      }
    }
  }
  return total;
}

template <typename T>
UncertaintyParams<T> UncertaintyParams<T>::init(int channels) {
  if (channels < 1) throw ParameterError("uncertainty head needs at least one channel");
  UncertaintyParams p;
  p.w = Tensor<T>({channels, 1});
  p.b = Tensor<T>({1});
  // softplus^-1(1 - floor) so the initial scale is 1
  p.b[0] = static_cast<T>(std::log(std::expm1(1.0 - kMinUncertainty)));
  return p;
}

template <typename T>
std::vector<T> UncertaintyParams<T>::scale(const BasicFeatureMap<T>& obs) const {
  if (w.size() != static_cast<std::size_t>(obs.channels()) || b.size() != 1) {
    throw DimensionError("uncertainty head expects " + std::to_string(w.size()) + " channels, got " +
                         std::to_string(obs.channels()));
  }
  // Same arithmetic as the tape path: gemm row then softplus.
  const int n = obs.plane();
  std::vector<T> rows(static_cast<std::size_t>(n) * obs.channels());
  transpose(obs.data().data(), obs.channels(), n, rows.data());
  std::vector<T> out(n);
  nn::linear_rows(rows.data(), n, obs.channels(), w.data(), b.data(), 1, out.data());
  for (auto& v : out) v = static_cast<T>(kMinUncertainty) + (v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)));
  return out;
}

namespace ad {

template <typename T>
Var reconstruction_loss(Tape<T>& tape, Var pred, Var obs, Var scale) {
  const Tensor<T>& pv = tape.value(pred);
  const Tensor<T>& ov = tape.value(obs);
  const Tensor<T>& sv = tape.value(scale);
  if (pv.rank() != 3 || pv.shape() != ov.shape()) {
    throw DimensionError("reconstruction_loss: shapes " + shape_string(pv.shape()) + " and " +
                         shape_string(ov.shape()));
  }
  const int c = pv.dim(0);
  const int n = pv.dim(1) * pv.dim(2);
  if (sv.size() != static_cast<std::size_t>(n)) throw DimensionError("reconstruction_loss: one scale per pixel");
  double total = 0.0;
  for (int p = 0; p < n; ++p) {
    double sq = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double r = static_cast<double>(pv[static_cast<std::size_t>(ch) * n + p]) - ov[static_cast<std::size_t>(ch) * n + p];
      sq += r * r;
    }
    const double s = sv[p];
    total += sq / (2.0 * s * s) + std::log(s);
  }
  return tape.record(Tensor<T>::scalar(static_cast<T>(total / n)), {pred, obs, scale},
                     [pred, obs, scale, c, n](Tape<T>& t, int self) {
                       const double g = static_cast<double>(t.grad_of(self)[0]) / n;
                       const Tensor<T>& pv = t.value(pred);
                       const Tensor<T>& ov = t.value(obs);
                       const Tensor<T>& sv = t.value(scale);
                       Tensor<T>* dp = t.requires_grad(pred) ? &t.grad_sink(pred) : nullptr;
                       Tensor<T>* dob = t.requires_grad(obs) ? &t.grad_sink(obs) : nullptr;
                       Tensor<T>* ds = t.requires_grad(scale) ? &t.grad_sink(scale) : nullptr;
                       for (int p = 0; p < n; ++p) {
                         const double s = sv[p];
                         const double inv_s2 = 1.0 / (s * s);
                         double sq = 0.0;
                         for (int ch = 0; ch < c; ++ch) {
                           const std::size_t i = static_cast<std::size_t>(ch) * n + p;
                           const double r = static_cast<double>(pv[i]) - ov[i];
                           sq += r * r;
                           if (dp) (*dp)[i] += static_cast<T>(g * r * inv_s2);
                           if (dob) (*dob)[i] -= static_cast<T>(g * r * inv_s2);
                         }
                         if (ds) (*ds)[p] += static_cast<T>(g * (1.0 / s - sq * inv_s2 / s));
                       }
                     });
}

template <typename T>
Var tv_loss(Tape<T>& tape, Var fm) {
  const Tensor<T>& fv = tape.value(fm);
  if (fv.rank() != 3) throw DimensionError("tv_loss expects C x H x W, got " + shape_string(fv.shape()));
  const auto value = featup::tv_loss(fv.to_feature_map());
  return tape.record(Tensor<T>::scalar(static_cast<T>(value)), {fm}, [fm](Tape<T>& t, int self) {
    const double g = t.grad_of(self)[0];
    const Tensor<T>& fv = t.value(fm);
    const int c = fv.dim(0);
    const int h = fv.dim(1);
    const int w = fv.dim(2);
    const int n = h * w;
    std::vector<double> mag(n);
    for (int p = 0; p < n; ++p) {
      double sq = 0.0;
      for (int ch = 0; ch < c; ++ch) sq += static_cast<double>(fv[static_cast<std::size_t>(ch) * n + p]) * fv[static_cast<std::size_t>(ch) * n + p];
      mag[p] = std::sqrt(sq);
    }
    std::vector<double> dmag(n, 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int p = y * w + x;
        if (y > 0) {
          const double d = 2.0 * (mag[p] - mag[p - w]);
          dmag[p] += d;
          dmag[p - w] -= d;
        }
        if (x > 0) {
          const double d = 2.0 * (mag[p] - mag[p - 1]);
          dmag[p] += d;
          dmag[p - 1] -= d;
        }
      }
    }
    Tensor<T>& df = t.grad_sink(fm);
    for (int p = 0; p < n; ++p) {
      if (mag[p] == 0.0) continue;  // subgradient 0 at the origin
      const double k = g * dmag[p] / mag[p];
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = static_cast<std::size_t>(ch) * n + p;
        df[i] += static_cast<T>(k * fv[i]);
      }
    }
  });
}

template <typename T>
Var uncertainty(Tape<T>& tape, Var obs_rows, Var w, Var b) {
  return softplus(tape, linear(tape, obs_rows, w, b), static_cast<T>(kMinUncertainty));
}

}  // namespace ad

#define FEATUP_INSTANTIATE(T)                                                                          \
  template struct UncertaintyParams<T>;                                                                \
  template double reconstruction_loss<T>(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,        \
                                         std::span<const T>);                                          \
  template double tv_loss<T>(const BasicFeatureMap<T>&);                                               \
  template ad::Var ad::reconstruction_loss<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var);                \
  template ad::Var ad::tv_loss<T>(ad::Tape<T>&, ad::Var);                                              \
  template ad::Var ad::uncertainty<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
