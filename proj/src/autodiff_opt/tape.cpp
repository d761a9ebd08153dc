#include "featup/tape.hpp"

namespace featup::ad {

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::parameter(std::string name, Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.id < 0 || in.id >= static_cast<int>(nodes_.size())) throw DimensionError("tape: invalid input handle");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  backward_done_ = true;
  grad_sink(loss)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <typename T>
std::map<std::string, Tensor<T>> Tape<T>::parameter_gradients() const {
  std::map<std::string, Tensor<T>> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.name.empty()) continue;
    out[n.name] = n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace featup::ad
