#include "shakenorm/autodiff.hpp"

#include <stdexcept>

namespace shakenorm {

template <typename T>
void ParamStore<T>::add(const std::string& name, Parameter<T>& p) {
  require_same_shape(p.value.shape(), p.grad.shape(), ("parameter " + name).c_str());
  if (!params_.emplace(name, &p).second) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::trainable_size() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) {
    if (p->trainable) n += p->value.numel();
  }
  return n;
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
  return nodes_[v.id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  n.param = n.requires_grad ? &p : nullptr;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward,
                     std::string_view op) {
  Node n;
  n.value = std::move(value);
  n.op = std::string(op);
  if (grad_enabled_) {
    for (auto in : inputs) {
      if (node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var v) const {
  const auto& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  auto& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor<T>::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate(Var v, const Tensor<T>& g) {
  auto& n = node(v);
  if (!n.requires_grad) return;
  require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Graph<T>::backward(Var loss) {
  auto& root = node(loss);
  if (root.value.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_to_string(root.value.shape()));
  }
  last_visits_ = 0;
  if (!root.requires_grad) return;
  grad_buffer(loss).fill(T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
      ++last_visits_;
    } else if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace shakenorm
