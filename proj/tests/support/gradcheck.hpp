#pragma once

// Central finite differences against tape gradients, in double.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "featup/ops.hpp"
#include "featup/tape.hpp"

namespace featup::testing {

struct GradCheck {
  int checked = 0;
  int failures = 0;
  double worst_abs = 0.0;  // largest |analytic - numeric|
  std::string worst_name;

  void merge(const GradCheck& o) {
    checked += o.checked;
    failures += o.failures;
    if (o.worst_abs > worst_abs) {
      worst_abs = o.worst_abs;
      worst_name = o.worst_name;
    }
  }
};

/// Passes when within 1e-3 relative or 1e-4 absolute.
inline bool gradients_agree(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  return diff <= 1e-4 || diff <= 1e-3 * std::max(std::abs(analytic), std::abs(numeric));
}

inline void record(GradCheck& r, const std::string& name, double analytic, double numeric) {
  ++r.checked;
  const double diff = std::abs(analytic - numeric);
  if (!gradients_agree(analytic, numeric)) ++r.failures;
  if (diff > r.worst_abs) {
    r.worst_abs = diff;
    r.worst_name = name;
  }
}

inline Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

/// Nonlinear scalar probe: 0.5 * ||out + offset||^2 with a fixed random offset.
inline ad::Var probe(ad::Tape<double>& tape, ad::Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto offset = random_tensor(tape.value(out).shape(), rng);
  return ad::half_sum_squares(tape, ad::add(tape, out, tape.constant(std::move(offset))));
}

/// `build(tape, params)` must register every tensor of `params` as a tape
/// parameter named prefix + field and return a scalar loss.
template <typename P, typename Build>
GradCheck check_parameters(P params, const std::string& prefix, Build build, double h = 1e-6) {
  ad::Tape<double> tape;
  const ad::Var loss = build(tape, params);
  tape.backward(loss);
  const auto grads = tape.parameter_gradients();
  auto eval = [&] {
    ad::Tape<double> t;
    return t.value(build(t, params)).item();
  };
  GradCheck r;
  params.visit([&](const char* field, Tensor<double>& t) {
    const std::string name = prefix + field;
    const auto it = grads.find(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = eval();
      t[i] = orig - h;
      const double down = eval();
      t[i] = orig;
      const double analytic = it == grads.end() ? 0.0 : it->second[i];
      record(r, name + "[" + std::to_string(i) + "]", analytic, (up - down) / (2 * h));
    }
  });
  return r;
}

/// `build(tape, x)` returns a scalar loss of the constant-free input `x`.
template <typename Build>
GradCheck check_input(Tensor<double> x, const std::string& name, Build build, double h = 1e-6) {
  ad::Tape<double> tape;
  const ad::Var xv = tape.parameter(name, x);
  tape.backward(build(tape, xv));
  const Tensor<double> analytic = tape.grad(xv);
  auto eval = [&] {
    ad::Tape<double> t;
    const ad::Var v = t.parameter(name, x);
    return t.value(build(t, v)).item();
  };
  GradCheck r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = eval();
    x[i] = orig - h;
    const double down = eval();
    x[i] = orig;
    record(r, name + "[" + std::to_string(i) + "]", analytic[i], (up - down) / (2 * h));
  }
  return r;
}

}  // namespace featup::testing
