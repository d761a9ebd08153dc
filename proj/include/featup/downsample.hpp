#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featup/tape.hpp"
#include "featup/tensor.hpp"

namespace featup {

/// Window geometry shared by both downsamplers.
///
/// The stride is in/out along each axis and must divide exactly. Output cell i
/// reads the k input pixels starting at i*stride + floor((stride-k)/2), so the
/// window is centered on the cell; indices falling outside the map are
/// reflected back in (edge pixel not repeated).
struct DownsampleGeometry {
  int kernel_size = 1;
  int in_h = 0, in_w = 0;
  int out_h = 0, out_w = 0;
  std::vector<int> rows;  // out_h x k input row indices
  std::vector<int> cols;  // out_w x k input column indices

  static DownsampleGeometry make(int kernel_size, int in_h, int in_w, int out_h, int out_w);
};

template <typename T>
struct SimpleDownsamplerParams {
  int kernel_size = 1;
  Tensor<T> logits;  // k x k, softmax gives the blur kernel

  static SimpleDownsamplerParams init(int kernel_size);

  template <typename F>
  void visit(F&& f) { f("logits", logits); }
  template <typename F>
  void visit(F&& f) const { f("logits", logits); }
};

template <typename T>
struct AttentionDownsamplerParams {
  int kernel_size = 1;
  Tensor<T> salience_weight;  // C x 1
  Tensor<T> salience_bias;    // 1
  Tensor<T> w;                // k x k
  Tensor<T> b;                // k x k

  /// w = b = 0, salience weights N(0, 0.02^2), bias 0: starts as average pooling.
  static AttentionDownsamplerParams init(int channels, int kernel_size, std::uint64_t seed);

  template <typename F>
  void visit(F&& f) {
    f("salience_weight", salience_weight);
    f("salience_bias", salience_bias);
    f("w", w);
    f("b", b);
  }
  template <typename F>
  void visit(F&& f) const {
    f("salience_weight", salience_weight);
    f("salience_bias", salience_bias);
    f("w", w);
    f("b", b);
  }

  template <typename U>
  AttentionDownsamplerParams<U> cast() const {
    return {kernel_size, salience_weight.template cast<U>(), salience_bias.template cast<U>(), w.template cast<U>(),
            b.template cast<U>()};
  }
};

/// Normalized k x k blur kernel (softmax of the logits).
template <typename T>
std::vector<T> simple_kernel(const SimpleDownsamplerParams<T>& p);

template <typename T>
BasicFeatureMap<T> simple_downsample(const BasicFeatureMap<T>& fm, const SimpleDownsamplerParams<T>& p, int out_h,
                                     int out_w);

/// Per-cell attention weights, out_h*out_w blocks of k*k (row-major window order).
template <typename T>
std::vector<T> attention_weights(const BasicFeatureMap<T>& fm, const AttentionDownsamplerParams<T>& p, int out_h,
                                 int out_w);

template <typename T>
BasicFeatureMap<T> attention_downsample(const BasicFeatureMap<T>& fm, const AttentionDownsamplerParams<T>& p,
                                        int out_h, int out_w);

namespace ad {

/// `fm` is C x H x W, `logits` k x k.
template <typename T>
Var simple_downsample(Tape<T>& tape, Var fm, Var logits, int kernel_size, int out_h, int out_w);

struct AttentionVars {
  Var salience_weight, salience_bias, w, b;
};

template <typename T>
AttentionVars attention_parameters(Tape<T>& tape, const AttentionDownsamplerParams<T>& p, const std::string& prefix);

template <typename T>
Var attention_downsample(Tape<T>& tape, Var fm, const AttentionVars& p, int kernel_size, int out_h, int out_w);

}  // namespace ad
}  // namespace featup
