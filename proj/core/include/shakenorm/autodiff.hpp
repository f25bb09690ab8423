#ifndef SHAKENORM_AUTODIFF_HPP_
#define SHAKENORM_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "shakenorm/tensor.hpp"

namespace shakenorm {

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> v, bool is_trainable = true)
      : value(std::move(v)), grad(Tensor<T>::zeros(value.shape())), trainable(is_trainable) {}

  void zero_grad() { grad.fill(T(0)); }
};

/// Named, non-owning view over the parameters of a model. Iteration order is by name.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Parameter<T>& p);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  void zero_grad();
  /// Number of scalar values over trainable parameters.
  std::size_t trainable_size() const;
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<T>*> params_;
};

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a topological order;
/// backward walks them in reverse and visits each node at most once.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value);
  Var leaf(Tensor<T> value, bool requires_grad);
  /// Leaf whose gradient is added into `p.grad` during backward.
  Var param(Parameter<T>& p);

  /// Adds an op node. The backward rule is kept only if some input requires a gradient.
  Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward, std::string_view op);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  Tensor<T>& mutable_value(Var v) { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::string_view op_name(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of `v` after backward; nullptr if none reached it.
  const Tensor<T>* grad(Var v) const;
  /// Zero-initialized gradient buffer for `v`, allocated on first use.
  Tensor<T>& grad_buffer(Var v);
  /// grad(v) += g when v requires a gradient.
  void accumulate(Var v, const Tensor<T>& g);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws ShapeError on non-scalar loss.
  void backward(Var loss);
  /// Number of backward rules executed by the last backward() call.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    std::string op;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  std::size_t last_visits_ = 0;
};

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace shakenorm

#endif  // SHAKENORM_AUTODIFF_HPP_
