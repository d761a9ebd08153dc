#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "featup/tape.hpp"
#include "featup/tensor.hpp"

namespace featup {

/// Positional/color encoding: for each input component z and k in [0, K),
/// the pair (cos(pi 2^k z), sin(pi 2^k z)); the raw components follow.
struct FourierConfig {
  int num_freqs = 10;
  bool include_color = true;

  int components() const { return include_color ? 5 : 2; }
  int encoded_dim() const { return components() * (2 * num_freqs + 1); }
  void validate() const;
};

/// `inputs` holds n rows of components() values (e_y, e_x[, r, g, b]).
template <typename T>
std::vector<T> fourier_features(std::span<const double> inputs, int n, const FourierConfig& cfg);

/// Per-query inputs (normalized y, x and the image color bilinearly sampled there).
std::vector<double> implicit_inputs(const GuidanceImage& image, std::span<const double> coords, int n,
                                    const FourierConfig& cfg);

/// Inputs for the pixel centers of a query_h x query_w grid.
std::vector<double> grid_inputs(const GuidanceImage& image, int query_h, int query_w, const FourierConfig& cfg);

inline constexpr double kImplicitDropout = 0.1;

/// MLP: Linear -> LayerNorm -> ReLU -> Dropout, twice, then Linear to the output dim.
template <typename T>
struct ImplicitParams {
  int in_dim = 0, hidden = 0, out_dim = 0;
  Tensor<T> w1, b1, g1, beta1;
  Tensor<T> w2, b2, g2, beta2;
  Tensor<T> w3, b3;

  /// Uniform(+-1/sqrt(fan_in)) weights and biases, unit gains, zero shifts.
  static ImplicitParams init(const FourierConfig& cfg, int hidden, int out_dim, std::uint64_t seed);
  std::size_t parameter_count() const;

  template <typename F>
  void visit(F&& f) {
    f("w1", w1); f("b1", b1); f("g1", g1); f("beta1", beta1);
    f("w2", w2); f("b2", b2); f("g2", g2); f("beta2", beta2);
    f("w3", w3); f("b3", b3);
  }
  template <typename F>
  void visit(F&& f) const {
    f("w1", w1); f("b1", b1); f("g1", g1); f("beta1", beta1);
    f("w2", w2); f("b2", b2); f("g2", g2); f("beta2", beta2);
    f("w3", w3); f("b3", b3);
  }

  template <typename U>
  ImplicitParams<U> cast() const {
    ImplicitParams<U> p;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.out_dim = out_dim;
    p.w1 = w1.template cast<U>(); p.b1 = b1.template cast<U>();
    p.g1 = g1.template cast<U>(); p.beta1 = beta1.template cast<U>();
    p.w2 = w2.template cast<U>(); p.b2 = b2.template cast<U>();
    p.g2 = g2.template cast<U>(); p.beta2 = beta2.template cast<U>();
    p.w3 = w3.template cast<U>(); p.b3 = b3.template cast<U>();
    return p;
  }
};

/// Evaluates the MLP on encoded rows (n x in_dim) to n x out_dim. In train
/// mode dropout masks are a pure function of (seed, layer, row, unit).
template <typename T>
std::vector<T> implicit_rows(const ImplicitParams<T>& p, std::span<const T> encoded, int n, bool train_mode,
                             std::uint64_t seed);

/// out_dim x query_h x query_w features of `image` at the query grid.
template <typename T>
BasicFeatureMap<T> implicit_forward(const ImplicitParams<T>& p, const FourierConfig& cfg, const GuidanceImage& image,
                                    int query_h, int query_w, bool train_mode = false, std::uint64_t seed = 0);

/// Features at arbitrary normalized (y, x) pairs: n x out_dim rows.
template <typename T>
std::vector<T> implicit_at(const ImplicitParams<T>& p, const FourierConfig& cfg, const GuidanceImage& image,
                           std::span<const double> coords, int n);

namespace ad {

struct ImplicitVars {
  Var w1, b1, g1, beta1, w2, b2, g2, beta2, w3, b3;
};

template <typename T>
ImplicitVars implicit_parameters(Tape<T>& tape, const ImplicitParams<T>& p, const std::string& prefix);

/// `encoded` is an n x in_dim constant; returns n x out_dim rows.
template <typename T>
Var implicit_rows(Tape<T>& tape, const ImplicitVars& v, Var encoded, bool train_mode, std::uint64_t seed);

}  // namespace ad
}  // namespace featup
