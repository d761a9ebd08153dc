#include "featup/implicit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "featup/ops.hpp"
#include "featup/parallel.hpp"
#include "featup/rng.hpp"
#include "featup/sampling.hpp"

namespace featup {

void FourierConfig::validate() const {
  if (num_freqs < 1) throw ParameterError("Fourier encoding needs at least one frequency");
  if (num_freqs > 30) throw ParameterError("Fourier encoding supports at most 30 frequencies");
}

template <typename T>
std::vector<T> fourier_features(std::span<const double> inputs, int n, const FourierConfig& cfg) {
  cfg.validate();
  const int comps = cfg.components();
  if (inputs.size() != static_cast<std::size_t>(n) * comps) {
    throw DimensionError("fourier_features expects " + std::to_string(comps) + " values per row");
  }
  const int dim = cfg.encoded_dim();
  std::vector<T> out(static_cast<std::size_t>(n) * dim);
  parallel_for(0, n, [&](std::int64_t i) {
    const double* z = inputs.data() + i * comps;
    T* row = out.data() + i * dim;
    int j = 0;
    for (int c = 0; c < comps; ++c) {
      for (int k = 0; k < cfg.num_freqs; ++k) {
        const double arg = std::numbers::pi * std::ldexp(1.0, k) * z[c];
        row[j++] = static_cast<T>(std::cos(arg));
        row[j++] = static_cast<T>(std::sin(arg));
      }
    }
    for (int c = 0; c < comps; ++c) row[j++] = static_cast<T>(z[c]);
  });
  return out;
}

std::vector<double> implicit_inputs(const GuidanceImage& image, std::span<const double> coords, int n,
                                    const FourierConfig& cfg) {
  if (coords.size() != static_cast<std::size_t>(n) * 2) throw DimensionError("expected n (y, x) pairs");
  const int comps = cfg.components();
  std::vector<double> in(static_cast<std::size_t>(n) * comps);
  FeatureMap planar;
  if (cfg.include_color) {
    if (image.empty()) throw DimensionError("implicit upsampler needs a guidance image");
    planar = image.to_planar();
  }
  std::vector<float> rgb(3);
  for (int i = 0; i < n; ++i) {
    double* row = in.data() + static_cast<std::size_t>(i) * comps;
    row[0] = coords[2 * i];
    row[1] = coords[2 * i + 1];
    if (cfg.include_color) {
      bilinear_sample_into<float>(planar, row[0], row[1], rgb);
      for (int k = 0; k < 3; ++k) row[2 + k] = rgb[k];
    }
  }
  return in;
}

std::vector<double> grid_inputs(const GuidanceImage& image, int query_h, int query_w, const FourierConfig& cfg) {
  if (query_h < 1 || query_w < 1) throw ParameterError("query grid must be at least 1x1");
  std::vector<double> coords(static_cast<std::size_t>(query_h) * query_w * 2);
  for (int y = 0; y < query_h; ++y) {
    for (int x = 0; x < query_w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * query_w + x;
      coords[2 * i] = pixel_to_normalized(y, query_h);
      coords[2 * i + 1] = pixel_to_normalized(x, query_w);
    }
  }
  return implicit_inputs(image, coords, query_h * query_w, cfg);
}

template <typename T>
ImplicitParams<T> ImplicitParams<T>::init(const FourierConfig& cfg, int hidden, int out_dim, std::uint64_t seed) {
  cfg.validate();
  if (hidden < 1 || out_dim < 1) throw ParameterError("implicit MLP widths must be positive");
  ImplicitParams p;
  p.in_dim = cfg.encoded_dim();
  p.hidden = hidden;
  p.out_dim = out_dim;
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](int rows, int cols, int fan_in) {
    Tensor<T> t(cols == 0 ? std::vector<int>{rows} : std::vector<int>{rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    return t;
  };
  p.w1 = uniform(p.in_dim, hidden, p.in_dim);
  p.b1 = uniform(hidden, 0, p.in_dim);
  p.w2 = uniform(hidden, hidden, hidden);
  p.b2 = uniform(hidden, 0, hidden);
  p.w3 = uniform(hidden, out_dim, hidden);
  p.b3 = uniform(out_dim, 0, hidden);
  p.g1 = Tensor<T>({hidden}, T(1));
  p.g2 = Tensor<T>({hidden}, T(1));
  p.beta1 = Tensor<T>({hidden});
  p.beta2 = Tensor<T>({hidden});
  return p;
}

template <typename T>
std::size_t ImplicitParams<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const char*, const Tensor<T>& t) { n += t.size(); });
  return n;
}

namespace {

constexpr int kRowChunk = 512;

template <typename T>
void check_params(const ImplicitParams<T>& p) {
  auto expect = [](const Tensor<T>& t, std::size_t n, const char* name) {
    if (t.size() != n) throw DimensionError(std::string("implicit parameter ") + name + " has the wrong size");
  };
  const std::size_t h = p.hidden;
  expect(p.w1, static_cast<std::size_t>(p.in_dim) * h, "w1");
  expect(p.w2, h * h, "w2");
  expect(p.w3, h * p.out_dim, "w3");
  for (const Tensor<T>* t : {&p.b1, &p.g1, &p.beta1, &p.b2, &p.g2, &p.beta2}) expect(*t, h, "hidden vector");
  expect(p.b3, p.out_dim, "b3");
}

template <typename T>
void dropout_rows(T* x, int rows, int dim, std::size_t row0, std::uint64_t seed, std::uint64_t layer) {
  const T scale = static_cast<T>(1.0 / (1.0 - kImplicitDropout));
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < dim; ++j) {
      const std::size_t idx = (row0 + r) * dim + j;
      T& v = x[static_cast<std::size_t>(r) * dim + j];
      v = nn::dropout_keep(seed, layer, idx, kImplicitDropout) ? v * scale : T(0);
    }
  }
}

}  // namespace

template <typename T>
std::vector<T> implicit_rows(const ImplicitParams<T>& p, std::span<const T> encoded, int n, bool train_mode,
                             std::uint64_t seed) {
  check_params(p);
  if (encoded.size() != static_cast<std::size_t>(n) * p.in_dim) {
    throw DimensionError("implicit MLP expects " + std::to_string(p.in_dim) + " encoded values per row");
  }
  std::vector<T> out(static_cast<std::size_t>(n) * p.out_dim);
  const int chunks = (n + kRowChunk - 1) / kRowChunk;
  const T eps = static_cast<T>(nn::kLayerNormEps);
  for (int ci = 0; ci < chunks; ++ci) {
    const int row0 = ci * kRowChunk;
    const int rows = std::min(kRowChunk, n - row0);
    std::vector<T> h1(static_cast<std::size_t>(rows) * p.hidden), h2(h1.size());
    nn::linear_rows(encoded.data() + static_cast<std::size_t>(row0) * p.in_dim, rows, p.in_dim, p.w1.data(),
                    p.b1.data(), p.hidden, h1.data());
    nn::layer_norm_rows(h1.data(), rows, p.hidden, p.g1.data(), p.beta1.data(), eps);
    nn::relu_inplace<T>(h1);
    if (train_mode) dropout_rows(h1.data(), rows, p.hidden, row0, seed, 1);
    nn::linear_rows(h1.data(), rows, p.hidden, p.w2.data(), p.b2.data(), p.hidden, h2.data());
    nn::layer_norm_rows(h2.data(), rows, p.hidden, p.g2.data(), p.beta2.data(), eps);
    nn::relu_inplace<T>(h2);
    if (train_mode) dropout_rows(h2.data(), rows, p.hidden, row0, seed, 2);
    nn::linear_rows(h2.data(), rows, p.hidden, p.w3.data(), p.b3.data(), p.out_dim,
                    out.data() + static_cast<std::size_t>(row0) * p.out_dim);
  }
  return out;
}

template <typename T>
BasicFeatureMap<T> implicit_forward(const ImplicitParams<T>& p, const FourierConfig& cfg, const GuidanceImage& image,
                                    int query_h, int query_w, bool train_mode, std::uint64_t seed) {
  const int n = query_h * query_w;
  auto enc = fourier_features<T>(grid_inputs(image, query_h, query_w, cfg), n, cfg);
  auto rows = implicit_rows<T>(p, enc, n, train_mode, seed);
  BasicFeatureMap<T> out(p.out_dim, query_h, query_w);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < p.out_dim; ++c) out.channel(c)[i] = rows[static_cast<std::size_t>(i) * p.out_dim + c];
  }
  return out;
}

template <typename T>
std::vector<T> implicit_at(const ImplicitParams<T>& p, const FourierConfig& cfg, const GuidanceImage& image,
                           std::span<const double> coords, int n) {
  auto enc = fourier_features<T>(implicit_inputs(image, coords, n, cfg), n, cfg);
  return implicit_rows<T>(p, enc, n, false, 0);
}

namespace ad {

template <typename T>
ImplicitVars implicit_parameters(Tape<T>& tape, const ImplicitParams<T>& p, const std::string& prefix) {
  check_params(p);
  ImplicitVars v;
  v.w1 = tape.parameter(prefix + "w1", p.w1);
  v.b1 = tape.parameter(prefix + "b1", p.b1);
  v.g1 = tape.parameter(prefix + "g1", p.g1);
  v.beta1 = tape.parameter(prefix + "beta1", p.beta1);
  v.w2 = tape.parameter(prefix + "w2", p.w2);
  v.b2 = tape.parameter(prefix + "b2", p.b2);
  v.g2 = tape.parameter(prefix + "g2", p.g2);
  v.beta2 = tape.parameter(prefix + "beta2", p.beta2);
  v.w3 = tape.parameter(prefix + "w3", p.w3);
  v.b3 = tape.parameter(prefix + "b3", p.b3);
  return v;
}

template <typename T>
Var implicit_rows(Tape<T>& tape, const ImplicitVars& v, Var encoded, bool train_mode, std::uint64_t seed) {
  const double rate = train_mode ? kImplicitDropout : 0.0;
  Var h = linear(tape, encoded, v.w1, v.b1);
  h = relu(tape, layer_norm(tape, h, v.g1, v.beta1));
  h = dropout(tape, h, rate, seed, 1);
  h = linear(tape, h, v.w2, v.b2);
  h = relu(tape, layer_norm(tape, h, v.g2, v.beta2));
  h = dropout(tape, h, rate, seed, 2);
  return linear(tape, h, v.w3, v.b3);
}

}  // namespace ad

#define FEATUP_INSTANTIATE(T)                                                                                  \
  template std::vector<T> fourier_features<T>(std::span<const double>, int, const FourierConfig&);            \
  template struct ImplicitParams<T>;                                                                          \
  template std::vector<T> implicit_rows(const ImplicitParams<T>&, std::span<const T>, int, bool,              \
                                        std::uint64_t);                                                       \
  template BasicFeatureMap<T> implicit_forward(const ImplicitParams<T>&, const FourierConfig&,                \
                                               const GuidanceImage&, int, int, bool, std::uint64_t);          \
  template std::vector<T> implicit_at(const ImplicitParams<T>&, const FourierConfig&, const GuidanceImage&,   \
                                      std::span<const double>, int);                                          \
  template ad::ImplicitVars ad::implicit_parameters<T>(ad::Tape<T>&, const ImplicitParams<T>&,                \
                                                       const std::string&);                                   \
  template ad::Var ad::implicit_rows<T>(ad::Tape<T>&, const ad::ImplicitVars&, ad::Var, bool, std::uint64_t);

FEATUP_INSTANTIATE(float)
FEATUP_INSTANTIATE(double)

#undef FEATUP_INSTANTIATE

}  // namespace featup
