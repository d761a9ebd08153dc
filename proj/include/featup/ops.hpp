#pragma once

#include <cstdint>
#include <span>

#include "featup/tape.hpp"

namespace featup {

// Row kernels shared by the tape ops and the tape-free inference paths, so
// both produce identical bits.
namespace nn {

/// out[n x out_dim] = x[n x in_dim] * w[in_dim x out_dim] + b
template <typename T>
void linear_rows(const T* x, int n, int in_dim, const T* w, const T* b, int out_dim, T* out);

/// Per-row layer normalization with affine gain/shift, in place.
template <typename T>
void layer_norm_rows(T* x, int n, int dim, const T* gamma, const T* beta, T eps);

template <typename T>
void relu_inplace(std::span<T> x);

template <typename T>
T gelu(T x);

template <typename T>
T gelu_grad(T x);

/// Inverted-dropout keep decision for element `index`, pure in (seed, stream, index).
bool dropout_keep(std::uint64_t seed, std::uint64_t stream, std::uint64_t index, double rate);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace nn

namespace ad {

/// x[n x in] * w[in x out] (+ b[out]); pass an invalid Var to omit the bias.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var gelu(Tape<T>& tape, Var x);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta);

/// Row-major element index i of `x` is kept with probability 1-rate and scaled by 1/(1-rate).
template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, std::uint64_t seed, std::uint64_t stream);

/// offset + log(1 + exp(x)), elementwise.
template <typename T>
Var softplus(Tape<T>& tape, Var x, T offset);

template <typename T>
Var exp(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

/// Sum of all elements, as a 1-element tensor.
template <typename T>
Var sum(Tape<T>& tape, Var x);

/// 0.5 * sum of squares.
template <typename T>
Var half_sum_squares(Tape<T>& tape, Var x);

/// Mean of several 1-element tensors.
template <typename T>
Var mean_of(Tape<T>& tape, std::span<const Var> scalars);

/// (H*W) x C rows -> C x H x W map.
template <typename T>
Var rows_to_map(Tape<T>& tape, Var rows, int height, int width);

/// C x H x W map -> (H*W) x C rows.
template <typename T>
Var map_to_rows(Tape<T>& tape, Var map);

}  // namespace ad
}  // namespace featup
