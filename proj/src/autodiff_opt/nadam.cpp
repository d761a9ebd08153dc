#include "featup/nadam.hpp"

#include <cmath>

namespace featup {

template <typename T>
void Nadam<T>::step(const std::vector<ParameterRef<T>>& params, const GradientMap<T>& grads) {
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (it->second.size() != p.value->size()) {
      throw DimensionError("gradient for '" + p.name + "' has shape " + shape_string(it->second.shape()) +
                           ", parameter has " + shape_string(p.value->shape()));
    }
    for (T g : it->second.storage()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient for parameter '" + p.name + "'");
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double mu = cfg_.beta1 * (1.0 - 0.5 * std::pow(0.96, t * cfg_.momentum_decay));
  const double mu_next = cfg_.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * cfg_.momentum_decay));
  mu_product_ *= mu;
  const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
  const double grad_coef = cfg_.lr * (1.0 - mu) / (1.0 - mu_product_);
  const double mom_coef = cfg_.lr * mu_next / (1.0 - mu_product_ * mu_next);

  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    const Tensor<T>& g = it->second;
    Moments& mo = state_[p.name];
    if (mo.m.empty()) {
      mo.m.assign(g.size(), 0.0);
      mo.v.assign(g.size(), 0.0);
    }
    Tensor<T>& x = *p.value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gi;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double denom = std::sqrt(mo.v[i] / bias2) + cfg_.eps;
      x[i] = static_cast<T>(static_cast<double>(x[i]) - grad_coef * gi / denom - mom_coef * mo.m[i] / denom);
    }
  }
}

template <typename T>
double clip_grad_norm(GradientMap<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (T v : g.storage()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (auto& v : g.storage()) v = static_cast<T>(v * s);
    }
  }
  return norm;
}

template class Nadam<float>;
template class Nadam<double>;
template double clip_grad_norm(GradientMap<float>&, double);
template double clip_grad_norm(GradientMap<double>&, double);

}  // namespace featup
