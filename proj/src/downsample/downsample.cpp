#include "featup/downsample.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "featup/parallel.hpp"

namespace featup {

namespace {

int reflect_index(int j, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  j %= period;
  if (j < 0) j += period;
  return j < n ? j : period - j;
}

std::vector<int> window_indices(int in_n, int out_n, int k) {
  const int stride = in_n / out_n;
  const int start = static_cast<int>(std::floor((stride - k) / 2.0));
  std::vector<int> idx(static_cast<std::size_t>(out_n) * k);
  for (int i = 0; i < out_n; ++i) {
    for (int a = 0; a < k; ++a) idx[static_cast<std::size_t>(i) * k + a] = reflect_index(i * stride + start + a, in_n);
  }
  return idx;
}

// Softmax of n logits into `out`; accumulation in double.
template <typename T>
void softmax(const double* logits, int n, T* out) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double total = 0.0;
  std::vector<double> e(n);
  for (int i = 0; i < n; ++i) {
    e[i] = std::exp(logits[i] - mx);
    total += e[i];
  }
  for (int i = 0; i < n; ++i) out[i] = static_cast<T>(e[i] / total);
}

struct Shape3 {
  int c, h, w;
};

// out[c, cell] = sum_n weights[cell*k2 + n] * f[c, window_n(cell)]; `weights`
// has stride 0 across cells for the shared simple kernel.
template <typename T>
void weighted_windows(const T* f, Shape3 s, const DownsampleGeometry& g, const T* weights, bool per_cell, T* out) {
  const int k = g.kernel_size;
  const int k2 = k * k;
  const std::size_t plane_in = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t plane_out = static_cast<std::size_t>(g.out_h) * g.out_w;
  parallel_for(0, g.out_h, [&](std::int64_t i) {
    for (int j = 0; j < g.out_w; ++j) {
      const std::size_t cell = static_cast<std::size_t>(i) * g.out_w + j;
      const T* wt = weights + (per_cell ? cell * k2 : 0);
      for (int c = 0; c < s.c; ++c) {
        const T* fc = f + c * plane_in;
        double acc = 0.0;
        for (int a = 0; a < k; ++a) {
          const T* row = fc + static_cast<std::size_t>(g.rows[static_cast<std::size_t>(i) * k + a]) * s.w;
          for (int b = 0; b < k; ++b) acc += static_cast<double>(wt[a * k + b]) * row[g.cols[static_cast<std::size_t>(j) * k + b]];
        }
        out[c * plane_out + cell] = static_cast<T>(acc);
      }
    }
  });
}

// Per-pixel 1x1 conv salience over channels.
template <typename T>
std::vector<T> salience_map(const T* f, Shape3 s, const T* v, T beta) {
  const std::size_t n = static_cast<std::size_t>(s.h) * s.w;
  std::vector<T> sal(n);
  for (std::size_t p = 0; p < n; ++p) {
    double acc = beta;
    for (int c = 0; c < s.c; ++c) acc += static_cast<double>(v[c]) * f[c * n + p];
    sal[p] = static_cast<T>(acc);
  }
  return sal;
}

template <typename T>
std::vector<T> attention_from_salience(const std::vector<T>& sal, Shape3 s, const DownsampleGeometry& g, const T* w,
                                       const T* b) {
  const int k = g.kernel_size;
  const int k2 = k * k;
  std::vector<T> att(static_cast<std::size_t>(g.out_h) * g.out_w * k2);
  parallel_for(0, g.out_h, [&](std::int64_t i) {
    std::vector<double> logits(k2);
    for (int j = 0; j < g.out_w; ++j) {
      for (int a = 0; a < k; ++a) {
        const int y = g.rows[static_cast<std::size_t>(i) * k + a];
        for (int bb = 0; bb < k; ++bb) {
          const int x = g.cols[static_cast<std::size_t>(j) * k + bb];
          const int n = a * k + bb;
          logits[n] = static_cast<double>(w[n]) * sal[static_cast<std::size_t>(y) * s.w + x] + b[n];
        }
      }
      softmax(logits.data(), k2, att.data() + (static_cast<std::size_t>(i) * g.out_w + j) * k2);
    }
  });
  return att;
}

// Adjoint of weighted_windows w.r.t. both f and the weights (gw laid out like weights).
template <typename T>
void weighted_windows_adjoint(const T* f, Shape3 s, const DownsampleGeometry& g, const T* weights, bool per_cell,
                              const T* grad_out, T* df, double* gw) {
  const int k = g.kernel_size;
  const int k2 = k * k;
  const std::size_t plane_in = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t plane_out = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int i = 0; i < g.out_h; ++i) {
    for (int j = 0; j < g.out_w; ++j) {
      const std::size_t cell = static_cast<std::size_t>(i) * g.out_w + j;
      const T* wt = weights + (per_cell ? cell * k2 : 0);
      double* gwt = gw + (per_cell ? cell * k2 : 0);
      for (int c = 0; c < s.c; ++c) {
        const T go = grad_out[c * plane_out + cell];
        const T* fc = f + c * plane_in;
        T* dfc = df ? df + c * plane_in : nullptr;
        for (int a = 0; a < k; ++a) {
          const std::size_t roff = static_cast<std::size_t>(g.rows[static_cast<std::size_t>(i) * k + a]) * s.w;
          for (int b = 0; b < k; ++b) {
            const std::size_t p = roff + g.cols[static_cast<std::size_t>(j) * k + b];
            gwt[a * k + b] += static_cast<double>(go) * fc[p];
            if (dfc) dfc[p] += go * wt[a * k + b];
          }
        }
      }
    }
  }
}

template <typename T>
Shape3 map_shape(const Tensor<T>& t) {
  if (t.rank() != 3) throw DimensionError("downsample expects C x H x W, got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2)};
}

void require_kernel(const std::vector<int>& shape, int k, const char* what) {
  const std::size_t n = static_cast<std::size_t>(k) * k;
  std::size_t total = 1;
  for (int d : shape) total *= d;
  if (total != n) {
    throw DimensionError(std::string(what) + " must hold " + std::to_string(n) + " values, got " + shape_string(shape));
  }
}

template <typename T>
std::vector<T> kernel_from_logits(const Tensor<T>& logits, int k) {
  require_kernel(logits.shape(), k, "downsampler logits");
  std::vector<double> l(logits.storage().begin(), logits.storage().end());
  std::vector<T> out(l.size());
  softmax(l.data(), static_cast<int>(l.size()), out.data());
  return out;
}

}  // namespace

DownsampleGeometry DownsampleGeometry::make(int kernel_size, int in_h, int in_w, int out_h, int out_w) {
  if (kernel_size < 1) throw ParameterError("kernel size must be >= 1");
  if (in_h < 1 || in_w < 1) throw DimensionError("cannot downsample an empty map");
  if (out_h < 1 || out_w < 1 || out_h > in_h || out_w > in_w) {
    throw ParameterError("downsample output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " must be nonempty and no larger than the input " + std::to_string(in_h) + "x" +
                         std::to_string(in_w));
  }
  if (in_h % out_h != 0 || in_w % out_w != 0) {
    throw ParameterError("downsample needs an integer stride, got " + std::to_string(in_h) + "x" +
                         std::to_string(in_w) + " -> " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  DownsampleGeometry g;
  g.kernel_size = kernel_size;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_h = out_h;
  g.out_w = out_w;
  g.rows = window_indices(in_h, out_h, kernel_size);
  g.cols = window_indices(in_w, out_w, kernel_size);
  return g;
}

template <typename T>
SimpleDownsamplerParams<T> SimpleDownsamplerParams<T>::init(int kernel_size) {
  if (kernel_size < 1) throw ParameterError("kernel size must be >= 1");
  return {kernel_size, Tensor<T>({kernel_size, kernel_size})};
}

template <typename T>
AttentionDownsamplerParams<T> AttentionDownsamplerParams<T>::init(int channels, int kernel_size, std::uint64_t seed) {
  if (kernel_size < 1) throw ParameterError("kernel size must be >= 1");
  if (channels < 1) throw ParameterError("channel count must be >= 1");
  AttentionDownsamplerParams p;
  p.kernel_size = kernel_size;
  p.salience_weight = Tensor<T>({channels, 1});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& v : p.salience_weight.storage()) v = static_cast<T>(normal(rng));
  p.salience_bias = Tensor<T>({1});
  p.w = Tensor<T>({kernel_size, kernel_size});
  p.b = Tensor<T>({kernel_size, kernel_size});
  return p;
}

template <typename T>
std::vector<T> simple_kernel(const SimpleDownsamplerParams<T>& p) {
  return kernel_from_logits(p.logits, p.kernel_size);
}

template <typename T>
BasicFeatureMap<T> simple_downsample(const BasicFeatureMap<T>& fm, const SimpleDownsamplerParams<T>& p, int out_h,
                                     int out_w) {
  auto g = DownsampleGeometry::make(p.kernel_size, fm.height(), fm.width(), out_h, out_w);
  auto kernel = simple_kernel(p);
  BasicFeatureMap<T> out(fm.channels(), out_h, out_w);
  weighted_windows(fm.data().data(), {fm.channels(), fm.height(), fm.width()}, g, kernel.data(), false,
                   out.data().data());
  return out;
}

namespace {

template <typename T>
void check_attention(const AttentionDownsamplerParams<T>& p, int channels) {
  if (p.salience_weight.size() != static_cast<std::size_t>(channels) || p.salience_bias.size() != 1) {
    throw DimensionError("attention downsampler salience expects " + std::to_string(channels) + " channels, got " +
                         shape_string(p.salience_weight.shape()));
  }
  require_kernel(p.w.shape(), p.kernel_size, "attention w");
  require_kernel(p.b.shape(), p.kernel_size, "attention b");
}

}  // namespace

template <typename T>
std::vector<T> attention_weights(const BasicFeatureMap<T>& fm, const AttentionDownsamplerParams<T>& p, int out_h,
                                 int out_w) {
  check_attention(p, fm.channels());
  auto g = DownsampleGeometry::make(p.kernel_size, fm.height(), fm.width(), out_h, out_w);
  Shape3 s{fm.channels(), fm.height(), fm.width()};
  auto sal = salience_map(fm.data().data(), s, p.salience_weight.data(), p.salience_bias[0]);
  return attention_from_salience(sal, s, g, p.w.data(), p.b.data());
}

template <typename T>
BasicFeatureMap<T> attention_downsample(const BasicFeatureMap<T>& fm, const AttentionDownsamplerParams<T>& p,
                                        int out_h, int out_w) {
  auto att = attention_weights(fm, p, out_h, out_w);
  auto g = DownsampleGeometry::make(p.kernel_size, fm.height(), fm.width(), out_h, out_w);
  BasicFeatureMap<T> out(fm.channels(), out_h, out_w);
  weighted_windows(fm.data().data(), {fm.channels(), fm.height(), fm.width()}, g, att.data(), true,
                   out.data().data());
  return out;
}

namespace ad {

template <typename T>
Var simple_downsample(Tape<T>& tape, Var fm, Var logits, int kernel_size, int out_h, int out_w) {
  const Shape3 s = map_shape(tape.value(fm));
  auto g = std::make_shared<DownsampleGeometry>(DownsampleGeometry::make(kernel_size, s.h, s.w, out_h, out_w));
  auto kernel = std::make_shared<std::vector<T>>(kernel_from_logits(tape.value(logits), kernel_size));
  Tensor<T> out({s.c, out_h, out_w});
  weighted_windows(tape.value(fm).data(), s, *g, kernel->data(), false, out.data());
  return tape.record(std::move(out), {fm, logits}, [fm, logits, s, g, kernel](Tape<T>& t, int self) {
    const int k2 = g->kernel_size * g->kernel_size;
    std::vector<double> gk(k2, 0.0);
    T* df = t.requires_grad(fm) ? t.grad_sink(fm).data() : nullptr;
    weighted_windows_adjoint(t.value(fm).data(), s, *g, kernel->data(), false, t.grad_of(self).data(), df, gk.data());
    if (!t.requires_grad(logits)) return;
    double dot = 0.0;
    for (int n = 0; n < k2; ++n) dot += (*kernel)[n] * gk[n];
    Tensor<T>& dl = t.grad_sink(logits);
    for (int n = 0; n < k2; ++n) dl[n] += static_cast<T>((*kernel)[n] * (gk[n] - dot));
  });
}

template <typename T>
AttentionVars attention_parameters(Tape<T>& tape, const AttentionDownsamplerParams<T>& p, const std::string& prefix) {
  return {tape.parameter(prefix + "salience_weight", p.salience_weight),
          tape.parameter(prefix + "salience_bias", p.salience_bias), tape.parameter(prefix + "w", p.w),
          tape.parameter(prefix + "b", p.b)};
}

template <typename T>
Var attention_downsample(Tape<T>& tape, Var fm, const AttentionVars& p, int kernel_size, int out_h, int out_w) {
  const Tensor<T>& fv = tape.value(fm);
  const Shape3 s = map_shape(fv);
  auto g = std::make_shared<DownsampleGeometry>(DownsampleGeometry::make(kernel_size, s.h, s.w, out_h, out_w));
  const Tensor<T>& v = tape.value(p.salience_weight);
  if (v.size() != static_cast<std::size_t>(s.c) || tape.value(p.salience_bias).size() != 1) {
    throw DimensionError("attention downsampler salience expects " + std::to_string(s.c) + " channels");
  }
  require_kernel(tape.value(p.w).shape(), kernel_size, "attention w");
  require_kernel(tape.value(p.b).shape(), kernel_size, "attention b");
  auto sal = std::make_shared<std::vector<T>>(salience_map(fv.data(), s, v.data(), tape.value(p.salience_bias)[0]));
  auto att = std::make_shared<std::vector<T>>(
      attention_from_salience(*sal, s, *g, tape.value(p.w).data(), tape.value(p.b).data()));
  Tensor<T> out({s.c, out_h, out_w});
  weighted_windows(fv.data(), s, *g, att->data(), true, out.data());
  return tape.record(std::move(out), {fm, p.salience_weight, p.salience_bias, p.w, p.b},
                     [fm, p, s, g, sal, att](Tape<T>& t, int self) {
                       const int k = g->kernel_size;
                       const int k2 = k * k;
                       const std::size_t cells = static_cast<std::size_t>(g->out_h) * g->out_w;
                       const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
                       const T* f = t.value(fm).data();
                       T* df = t.requires_grad(fm) ? t.grad_sink(fm).data() : nullptr;
                       std::vector<double> ga(cells * k2, 0.0);
                       weighted_windows_adjoint(f, s, *g, att->data(), true, t.grad_of(self).data(), df, ga.data());

                       // Through the per-cell softmax to logits, then to w, b and the salience map.
                       const T* wv = t.value(p.w).data();
                       std::vector<double> gw(k2, 0.0), gb(k2, 0.0), gsal(plane, 0.0);
                       for (int i = 0; i < g->out_h; ++i) {
                         for (int j = 0; j < g->out_w; ++j) {
                           const std::size_t cell = static_cast<std::size_t>(i) * g->out_w + j;
                           const T* a = att->data() + cell * k2;
                           const double* gac = ga.data() + cell * k2;
                           double dot = 0.0;
                           for (int n = 0; n < k2; ++n) dot += a[n] * gac[n];
                           for (int aa = 0; aa < k; ++aa) {
                             const std::size_t roff =
                                 static_cast<std::size_t>(g->rows[static_cast<std::size_t>(i) * k + aa]) * s.w;
                             for (int bb = 0; bb < k; ++bb) {
                               const int n = aa * k + bb;
                               const std::size_t q = roff + g->cols[static_cast<std::size_t>(j) * k + bb];
                               const double gl = a[n] * (gac[n] - dot);
                               gw[n] += gl * (*sal)[q];
                               gb[n] += gl;
                               gsal[q] += gl * wv[n];
                             }
                           }
                         }
                       }
                       if (t.requires_grad(p.w)) {
                         Tensor<T>& d = t.grad_sink(p.w);
                         for (int n = 0; n < k2; ++n) d[n] += static_cast<T>(gw[n]);
                       }
                       if (t.requires_grad(p.b)) {
                         Tensor<T>& d = t.grad_sink(p.b);
                         for (int n = 0; n < k2; ++n) d[n] += static_cast<T>(gb[n]);
                       }
                       const T* v = t.value(p.salience_weight).data();
                       if (t.requires_grad(p.salience_weight)) {
                         Tensor<T>& d = t.grad_sink(p.salience_weight);
                         for (int c = 0; c < s.c; ++c) {
                           double acc = 0.0;
                           for (std::size_t q = 0; q < plane; ++q) acc += gsal[q] * f[c * plane + q];
                           d[c] += static_cast<T>(acc);
                         }
                       }
                       if (t.requires_grad(p.salience_bias)) {
                         double acc = 0.0;
                         for (double gq : gsal) acc += gq;
                         t.grad_sink(p.salience_bias)[0] += static_cast<T>(acc);
                       }
                       if (df) {
                         for (int c = 0; c < s.c; ++c) {
                           for (std::size_t q = 0; q < plane; ++q) df[c * plane + q] += static_cast<T>(gsal[q] * v[c]);
                         }
                       }
                     });
}

}  // namespace ad

#define FEATUP_INSTANTIATE(T)                                                                                   \
  template struct SimpleDownsamplerParams<T>;                                                                  \
  template struct AttentionDownsamplerParams<T>;                                                               \
  template std::vector<T> simple_kernel(const SimpleDownsamplerParams<T>&);                                    \
  template BasicFeatureMap<T> simple_downsample(const BasicFeatureMap<T>&, const SimpleDownsamplerParams<T>&,  \
                                                int, int);                                                     \
  template std::vector<T> attention_weights(const BasicFeatureMap<T>&, const AttentionDownsamplerParams<T>&,   \
                                            int, int);                                                         \
  template BasicFeatureMap<T> attention_downsample(const BasicFeatureMap<T>&,                                  \
                                                   const AttentionDownsamplerParams<T>&, int, int);            \
  template ad::Var ad::simple_downsample<T>(ad::Tape<T>&, ad::Var, ad::Var, int, int, int);                    \
  template ad::AttentionVars ad::attention_parameters<T>(ad::Tape<T>&, const AttentionDownsamplerParams<T>&,   \
                                                         const std::string&);                                  \
  template ad::Var ad::attention_downsample<T>(ad::Tape<T>&, ad::Var, const ad::AttentionVars&, int, int, int);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
