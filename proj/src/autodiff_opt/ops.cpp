#include "featup/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "featup/gemm.hpp"
#include "featup/parallel.hpp"
#include "featup/rng.hpp"

namespace featup {
namespace nn {

template <typename T>
void linear_rows(const T* x, int n, int in_dim, const T* w, const T* b, int out_dim, T* out) {
  gemm<T>(n, in_dim, out_dim, x, in_dim, w, out_dim, out, out_dim, b, false);
}

template <typename T>
void layer_norm_rows(T* x, int n, int dim, const T* gamma, const T* beta, T eps) {
  parallel_for(0, n, [&](std::int64_t i) {
    T* row = x + i * dim;
    double mean = 0.0;
    for (int j = 0; j < dim; ++j) mean += row[j];
    mean /= dim;
    double var = 0.0;
    for (int j = 0; j < dim; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= dim;
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T mu = static_cast<T>(mean);
    for (int j = 0; j < dim; ++j) row[j] = (row[j] - mu) * inv * gamma[j] + beta[j];
  });
}

template <typename T>
void relu_inplace(std::span<T> x) {
  for (auto& v : x) v = v > T(0) ? v : T(0);
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

bool dropout_keep(std::uint64_t seed, std::uint64_t stream, std::uint64_t index, double rate) {
  return counter_uniform(seed, stream, index) >= rate;
}

}  // namespace nn

namespace ad {

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require_matrix(xv, "linear input");
  require_matrix(wv, "linear weight");
  const int n = xv.dim(0);
  const int in = xv.dim(1);
  const int out = wv.dim(1);
  if (wv.dim(0) != in) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  }
  const T* bias = nullptr;
  if (b.valid()) {
    if (tape.value(b).size() != static_cast<std::size_t>(out)) throw DimensionError("linear: bias size mismatch");
    bias = tape.value(b).data();
  }
  Tensor<T> y({n, out});
  nn::linear_rows(xv.data(), n, in, wv.data(), bias, out, y.data());
  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return tape.record(std::move(y), inputs, [x, w, b, n, in, out](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    if (t.requires_grad(x)) {
      std::vector<T> wt(static_cast<std::size_t>(in) * out);
      transpose(t.value(w).data(), in, out, wt.data());
      Tensor<T>& dx = t.grad_sink(x);
      gemm<T>(n, out, in, g.data(), out, wt.data(), in, dx.data(), in, nullptr, true);
    }
    if (t.requires_grad(w)) {
      std::vector<T> xt(static_cast<std::size_t>(in) * n);
      transpose(t.value(x).data(), n, in, xt.data());
      Tensor<T>& dw = t.grad_sink(w);
      gemm<T>(in, n, out, xt.data(), n, g.data(), out, dw.data(), out, nullptr, true);
    }
    if (b.valid() && t.requires_grad(b)) {
      Tensor<T>& db = t.grad_sink(b);
      for (int i = 0; i < n; ++i) {
        const T* row = g.data() + static_cast<std::size_t>(i) * out;
        for (int j = 0; j < out; ++j) db[j] += row[j];
      }
    }
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  nn::relu_inplace<T>(y.storage());
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += g[i];
    }
  });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.storage()) v = nn::gelu(v);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] * nn::gelu_grad(xv[i]);
  });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta) {
  const Tensor<T>& xv = tape.value(x);
  require_matrix(xv, "layer_norm input");
  const int n = xv.dim(0);
  const int d = xv.dim(1);
  if (tape.value(gamma).size() != static_cast<std::size_t>(d) || tape.value(beta).size() != static_cast<std::size_t>(d)) {
    throw DimensionError("layer_norm: affine parameter size mismatch");
  }
  // Normalized activations and per-row inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(xv.storage());
  auto inv_std = std::make_shared<std::vector<T>>(n);
  const T eps = static_cast<T>(nn::kLayerNormEps);
  parallel_for(0, n, [&](std::int64_t i) {
    T* row = xhat->data() + i * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double dv = row[j] - mean;
      var += dv * dv;
    }
    var /= d;
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T mu = static_cast<T>(mean);
    for (int j = 0; j < d; ++j) row[j] = (row[j] - mu) * inv;
    (*inv_std)[i] = inv;
  });
  Tensor<T> y({n, d});
  const T* gv = tape.value(gamma).data();
  const T* bv = tape.value(beta).data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t j = i % d;
    y[i] = (*xhat)[i] * gv[j] + bv[j];
  }
  return tape.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, n, d, xhat, inv_std](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    const T* gv = t.value(gamma).data();
    if (t.requires_grad(gamma) || t.requires_grad(beta)) {
      Tensor<T>& dg = t.grad_sink(gamma);
      Tensor<T>& db = t.grad_sink(beta);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * d + j;
          dg[j] += g[idx] * (*xhat)[idx];
          db[j] += g[idx];
        }
      }
    }
    if (t.requires_grad(x)) {
      Tensor<T>& dx = t.grad_sink(x);
      parallel_for(0, n, [&](std::int64_t i) {
        const std::size_t base = static_cast<std::size_t>(i) * d;
        double mean_g = 0.0;
        double mean_gx = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gh = static_cast<double>(g[base + j]) * gv[j];
          mean_g += gh;
          mean_gx += gh * (*xhat)[base + j];
        }
        mean_g /= d;
        mean_gx /= d;
        const double inv = (*inv_std)[i];
        for (int j = 0; j < d; ++j) {
          const double gh = static_cast<double>(g[base + j]) * gv[j];
          dx[base + j] += static_cast<T>(inv * (gh - mean_g - (*xhat)[base + j] * mean_gx));
        }
      });
    }
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, std::uint64_t seed, std::uint64_t stream) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ParameterError("dropout rate must be < 1");
  const Tensor<T>& xv = tape.value(x);
  auto mask = std::make_shared<std::vector<T>>(xv.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = nn::dropout_keep(seed, stream, i, rate) ? keep_scale : T(0);
    y[i] = xv[i] * (*mask)[i];
  }
  return tape.record(std::move(y), {x}, [x, mask](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
  });
}

template <typename T>
Var softplus(Tape<T>& tape, Var x, T offset) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    // log1p(exp(v)) without overflow
    y[i] = offset + (v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)));
  }
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] / (T(1) + std::exp(-xv[i]));
  });
}

template <typename T>
Var exp(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.storage()) v = std::exp(v);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    const Tensor<T>& yv = t.value(Var{self});
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i];
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& d = t.grad_sink(v);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.storage()) v *= factor;
  return tape.record(std::move(y), {x}, [x, factor](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  double acc = 0.0;
  for (T v : tape.value(x).storage()) acc += v;
  return tape.record(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [x](Tape<T>& t, int self) {
    const T g = t.grad_of(self)[0];
    Tensor<T>& dx = t.grad_sink(x);
    for (auto& v : dx.storage()) v += g;
  });
}

template <typename T>
Var half_sum_squares(Tape<T>& tape, Var x) {
  double acc = 0.0;
  for (T v : tape.value(x).storage()) acc += static_cast<double>(v) * v;
  return tape.record(Tensor<T>::scalar(static_cast<T>(0.5 * acc)), {x}, [x](Tape<T>& t, int self) {
    const T g = t.grad_of(self)[0];
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_sink(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g * xv[i];
  });
}

template <typename T>
Var mean_of(Tape<T>& tape, std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("mean_of needs at least one term");
  double acc = 0.0;
  for (Var v : scalars) acc += tape.value(v).item();
  const T inv = static_cast<T>(1.0 / scalars.size());
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return tape.record(Tensor<T>::scalar(static_cast<T>(acc / scalars.size())), inputs,
                     [inputs, inv](Tape<T>& t, int self) {
                       const T g = t.grad_of(self)[0] * inv;
                       for (Var v : inputs) {
                         if (t.requires_grad(v)) t.grad_sink(v)[0] += g;
                       }
                     });
}

template <typename T>
Var rows_to_map(Tape<T>& tape, Var rows, int height, int width) {
  const Tensor<T>& rv = tape.value(rows);
  require_matrix(rv, "rows_to_map");
  const int n = rv.dim(0);
  const int c = rv.dim(1);
  if (n != height * width) throw DimensionError("rows_to_map: row count does not match grid");
  Tensor<T> y({c, height, width});
  transpose(rv.data(), n, c, y.data());
  return tape.record(std::move(y), {rows}, [rows, n, c](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    std::vector<T> gt(g.size());
    transpose(g.data(), c, n, gt.data());
    Tensor<T>& d = t.grad_sink(rows);
    for (std::size_t i = 0; i < gt.size(); ++i) d[i] += gt[i];
  });
}

template <typename T>
Var map_to_rows(Tape<T>& tape, Var map) {
  const Tensor<T>& mv = tape.value(map);
  if (mv.rank() != 3) throw DimensionError("map_to_rows expects C x H x W, got " + shape_string(mv.shape()));
  const int c = mv.dim(0);
  const int n = mv.dim(1) * mv.dim(2);
  Tensor<T> y({n, c});
  transpose(mv.data(), c, n, y.data());
  return tape.record(std::move(y), {map}, [map, n, c](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_of(self);
    std::vector<T> gt(g.size());
    transpose(g.data(), n, c, gt.data());
    Tensor<T>& d = t.grad_sink(map);
    for (std::size_t i = 0; i < gt.size(); ++i) d[i] += gt[i];
  });
}

}  // namespace ad

#define FEATUP_INSTANTIATE(T)                                                                    \
  template void nn::linear_rows<T>(const T*, int, int, const T*, const T*, int, T*);            \
  template void nn::layer_norm_rows<T>(T*, int, int, const T*, const T*, T);                    \
  template void nn::relu_inplace<T>(std::span<T>);                                              \
  template T nn::gelu<T>(T);                                                                    \
  template T nn::gelu_grad<T>(T);                                                               \
  template ad::Var ad::linear<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var);                                              \
  template ad::Var ad::relu<T>(ad::Tape<T>&, ad::Var);                                                          \
  template ad::Var ad::gelu<T>(ad::Tape<T>&, ad::Var);                                                          \
  template ad::Var ad::layer_norm<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var);                                          \
  template ad::Var ad::dropout<T>(ad::Tape<T>&, ad::Var, double, std::uint64_t, std::uint64_t);                 \
  template ad::Var ad::softplus<T>(ad::Tape<T>&, ad::Var, T);                                                   \
  template ad::Var ad::exp<T>(ad::Tape<T>&, ad::Var);                                                           \
  template ad::Var ad::add<T>(ad::Tape<T>&, ad::Var, ad::Var);                                                      \
  template ad::Var ad::scale<T>(ad::Tape<T>&, ad::Var, T);                                                      \
  template ad::Var ad::sum<T>(ad::Tape<T>&, ad::Var);                                                           \
  template ad::Var ad::half_sum_squares<T>(ad::Tape<T>&, ad::Var);                                              \
  template ad::Var ad::mean_of<T>(ad::Tape<T>&, std::span<const ad::Var>);                                   \
  template ad::Var ad::rows_to_map<T>(ad::Tape<T>&, ad::Var, int, int);                                         \
  template ad::Var ad::map_to_rows<T>(ad::Tape<T>&, ad::Var);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
