#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "featup/tensor.hpp"

namespace featup {

struct NadamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum_decay = 0.004;
};

/// A named, optimizer-owned view of a parameter tensor.
template <typename T>
struct ParameterRef {
  std::string name;
  Tensor<T>* value = nullptr;
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

/// Nesterov-accelerated Adam with the momentum schedule
/// mu_t = beta1 * (1 - 0.5 * 0.96^(t * momentum_decay)).
template <typename T>
class Nadam {
 public:
  explicit Nadam(NadamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter that has an entry in `grads`; throws
  /// NumericError naming the parameter on a non-finite gradient (before any
  /// parameter is modified).
  void step(const std::vector<ParameterRef<T>>& params, const GradientMap<T>& grads);

  std::int64_t steps() const { return step_; }
  const NadamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  NadamConfig cfg_;
  std::int64_t step_ = 0;
  double mu_product_ = 1.0;
  std::map<std::string, Moments> state_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
template <typename T>
double clip_grad_norm(GradientMap<T>& grads, double max_norm);

}  // namespace featup
