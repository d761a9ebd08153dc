#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "featup/tensor.hpp"

namespace featup::ad {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode record of tensor operations.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// reverse topological order. Each op stores its own vector-Jacobian product
/// as a closure over whatever intermediates it needs. Gradients accumulate
/// additively into inputs. A tape is single-owner; use one per thread.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int node)>;

  Var constant(Tensor<T> value);
  /// Named leaf whose gradient is collected by parameter_gradients().
  Var parameter(std::string name, Tensor<T> value);
  /// Appends the result of an op. `backward` is skipped when no input needs grad.
  Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient flowing into node `node` (valid inside its backward closure).
  const Tensor<T>& grad_of(int node) const { return nodes_.at(node).grad; }
  /// Accumulation buffer of an input; zero-initialized on first use.
  Tensor<T>& grad_sink(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse.
  void backward(Var loss);

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Tensor<T> grad(Var v) const;
  std::map<std::string, Tensor<T>> parameter_gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::string name;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace featup::ad
