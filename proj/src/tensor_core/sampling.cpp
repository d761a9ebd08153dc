#include "featup/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "featup/parallel.hpp"

namespace featup {

AxisTap clamp_tap(double pixel, int n) {
  if (n < 1) throw DimensionError("cannot sample an empty axis");
  double p = std::clamp(pixel, 0.0, static_cast<double>(n - 1));
  int i0 = static_cast<int>(std::floor(p));
  if (i0 >= n - 1) return {n - 1, n - 1, 0.0};
  return {i0, i0 + 1, p - i0};
}

AxisPlan resize_plan(int in_n, int out_n) {
  if (in_n < 1 || out_n < 1) throw DimensionError("resize axes must be nonempty");
  AxisPlan plan(out_n);
  for (int o = 0; o < out_n; ++o) {
    // Pixel center of output o, expressed in input pixel-center coordinates.
    double p = (o + 0.5) * in_n / out_n - 0.5;
    plan[o] = clamp_tap(p, in_n);
  }
  return plan;
}

namespace {

template <typename T>
inline T lerp_tap(T a, T b, T w) {
  return w == T(0) ? a : (T(1) - w) * a + w * b;
}

}  // namespace

template <typename T>
BasicFeatureMap<T> resample(const BasicFeatureMap<T>& in, const AxisPlan& rows, const AxisPlan& cols) {
  if (in.empty()) throw DimensionError("cannot resample an empty feature map");
  if (rows.empty() || cols.empty()) throw ParameterError("resample output must be at least 1x1");
  const int out_h = static_cast<int>(rows.size());
  const int out_w = static_cast<int>(cols.size());
  BasicFeatureMap<T> out(in.channels(), out_h, out_w);
  parallel_for(0, in.channels(), [&](std::int64_t c) {
    auto src = in.channel(static_cast<int>(c));
    auto dst = out.channel(static_cast<int>(c));
    const int w = in.width();
    for (int y = 0; y < out_h; ++y) {
      const AxisTap& ty = rows[y];
      const T wy = static_cast<T>(ty.w1);
      const T* r0 = src.data() + static_cast<std::size_t>(ty.i0) * w;
      const T* r1 = src.data() + static_cast<std::size_t>(ty.i1) * w;
      for (int x = 0; x < out_w; ++x) {
        const AxisTap& tx = cols[x];
        const T wx = static_cast<T>(tx.w1);
        T top = lerp_tap(r0[tx.i0], r0[tx.i1], wx);
        T value = top;
        if (wy != T(0)) value = (T(1) - wy) * top + wy * lerp_tap(r1[tx.i0], r1[tx.i1], wx);
        dst[static_cast<std::size_t>(y) * out_w + x] = value;
      }
    }
  });
  return out;
}

template <typename T>
BasicFeatureMap<T> resample_adjoint(const BasicFeatureMap<T>& grad_out, const AxisPlan& rows, const AxisPlan& cols,
                                    int in_h, int in_w) {
  if (grad_out.height() != static_cast<int>(rows.size()) || grad_out.width() != static_cast<int>(cols.size())) {
    throw DimensionError("resample_adjoint: gradient shape does not match plan");
  }
  BasicFeatureMap<T> grad_in(grad_out.channels(), in_h, in_w);
  const int out_h = grad_out.height();
  const int out_w = grad_out.width();
  parallel_for(0, grad_out.channels(), [&](std::int64_t c) {
    auto g = grad_out.channel(static_cast<int>(c));
    auto dst = grad_in.channel(static_cast<int>(c));
    for (int y = 0; y < out_h; ++y) {
      const AxisTap& ty = rows[y];
      const T wy1 = static_cast<T>(ty.w1);
      const T wy0 = T(1) - wy1;
      T* r0 = dst.data() + static_cast<std::size_t>(ty.i0) * in_w;
      T* r1 = dst.data() + static_cast<std::size_t>(ty.i1) * in_w;
      for (int x = 0; x < out_w; ++x) {
        const AxisTap& tx = cols[x];
        const T wx1 = static_cast<T>(tx.w1);
        const T wx0 = T(1) - wx1;
        const T gv = g[static_cast<std::size_t>(y) * out_w + x];
        r0[tx.i0] += wy0 * wx0 * gv;
        r0[tx.i1] += wy0 * wx1 * gv;
        r1[tx.i0] += wy1 * wx0 * gv;
        r1[tx.i1] += wy1 * wx1 * gv;
      }
    }
  });
  return grad_in;
}

template <typename T>
BasicFeatureMap<T> bilinear_resize(const BasicFeatureMap<T>& in, int out_h, int out_w) {
  if (in.empty()) throw DimensionError("cannot resize an empty feature map");
  if (out_h < 1 || out_w < 1) throw ParameterError("resize output must be at least 1x1");
  return resample(in, resize_plan(in.height(), out_h), resize_plan(in.width(), out_w));
}

template <typename T>
void bilinear_sample_into(const BasicFeatureMap<T>& fm, double y, double x, std::span<T> out) {
  if (fm.empty()) throw DimensionError("cannot sample an empty feature map");
  if (out.size() != static_cast<std::size_t>(fm.channels())) throw DimensionError("sample buffer size mismatch");
  AxisTap ty = clamp_tap(normalized_to_pixel(y, fm.height()), fm.height());
  AxisTap tx = clamp_tap(normalized_to_pixel(x, fm.width()), fm.width());
  const T wy = static_cast<T>(ty.w1);
  const T wx = static_cast<T>(tx.w1);
  for (int c = 0; c < fm.channels(); ++c) {
    T top = lerp_tap(fm(c, ty.i0, tx.i0), fm(c, ty.i0, tx.i1), wx);
    T value = top;
    if (wy != T(0)) value = (T(1) - wy) * top + wy * lerp_tap(fm(c, ty.i1, tx.i0), fm(c, ty.i1, tx.i1), wx);
    out[c] = value;
  }
}

std::vector<float> bilinear_sample(const FeatureMap& fm, double y, double x) {
  if (fm.empty()) throw DimensionError("cannot sample an empty feature map");
  std::vector<float> out(fm.channels());
  bilinear_sample_into<float>(fm, y, x, out);
  return out;
}

template <typename T>
BasicImage<T> area_downscale(const BasicImage<T>& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1 || image.height() % out_h != 0 || image.width() % out_w != 0) {
    throw ParameterError("area downscale needs an integer factor, got " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()) + " -> " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
  }
  const int fy = image.height() / out_h;
  const int fx = image.width() / out_w;
  if (fy == 1 && fx == 1) return image;
  BasicImage<T> out(out_h, out_w);
  const double inv = 1.0 / (fy * fx);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int a = 0; a < fy; ++a) {
          for (int b = 0; b < fx; ++b) acc += image(y * fy + a, x * fx + b, k);
        }
        out(y, x, k) = static_cast<T>(acc * inv);
      }
    }
  }
  return out;
}

template <typename T>
BasicImage<T> bilinear_resize(const BasicImage<T>& image, int out_h, int out_w) {
  if (image.height() == out_h && image.width() == out_w) return image;
  return BasicImage<T>::from_planar(bilinear_resize(image.to_planar(), out_h, out_w));
}

#define FEATUP_INSTANTIATE(T)                                                                                  \
  template BasicFeatureMap<T> resample(const BasicFeatureMap<T>&, const AxisPlan&, const AxisPlan&);          \
  template BasicFeatureMap<T> resample_adjoint(const BasicFeatureMap<T>&, const AxisPlan&, const AxisPlan&,   \
                                               int, int);                                                      \
  template BasicFeatureMap<T> bilinear_resize(const BasicFeatureMap<T>&, int, int);                           \
  template void bilinear_sample_into(const BasicFeatureMap<T>&, double, double, std::span<T>);                \
  template BasicImage<T> area_downscale(const BasicImage<T>&, int, int);                                      \
  template BasicImage<T> bilinear_resize(const BasicImage<T>&, int, int);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
