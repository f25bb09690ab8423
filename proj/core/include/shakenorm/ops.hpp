#ifndef SHAKENORM_OPS_HPP_
#define SHAKENORM_OPS_HPP_

#include <cstddef>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/tensor.hpp"

namespace shakenorm {

enum class Elementwise { kAdd, kSub, kMul, kScale, kRelu, kSigmoid, kTanh };

/// Shape-preserving elementwise op. Binary ops require equal shapes; kScale multiplies by `scale`.
template <typename T>
Var elementwise(Graph<T>& g, Elementwise op, Var a, Var b = {}, T scale = T(1));

template <typename T>
Var add(Graph<T>& g, Var a, Var b) { return elementwise(g, Elementwise::kAdd, a, b); }
template <typename T>
Var sub(Graph<T>& g, Var a, Var b) { return elementwise(g, Elementwise::kSub, a, b); }
template <typename T>
Var mul(Graph<T>& g, Var a, Var b) { return elementwise(g, Elementwise::kMul, a, b); }
template <typename T>
Var scale(Graph<T>& g, Var a, T s) { return elementwise(g, Elementwise::kScale, a, Var{}, s); }
template <typename T>
Var relu(Graph<T>& g, Var a) { return elementwise(g, Elementwise::kRelu, a); }
template <typename T>
Var sigmoid(Graph<T>& g, Var a) { return elementwise(g, Elementwise::kSigmoid, a); }
template <typename T>
Var tanh(Graph<T>& g, Var a) { return elementwise(g, Elementwise::kTanh, a); }

/// Sum of all elements, as a one-element tensor.
template <typename T>
Var sum(Graph<T>& g, Var a);

/// Mean of all elements, as a one-element tensor.
template <typename T>
Var mean(Graph<T>& g, Var a);

/// [m x k] * [k x n].
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);

/// x[n x in] * w[out x in]^T.
template <typename T>
Var linear(Graph<T>& g, Var x, Var w);

/// x[n x c] + bias[c] broadcast along rows. Explicit op, not general broadcasting.
template <typename T>
Var bias_add(Graph<T>& g, Var x, Var bias);

/// Each row divided by its Euclidean norm. Throws std::domain_error on a zero row.
template <typename T>
Var normalize_rows(Graph<T>& g, Var w);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

/// Output extent of one spatial axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// x[batch x cin x h x w] (*) k[cout x cin/groups x kh x kw].
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, Conv2dOptions opts = {});

enum class PoolKind { kGlobalAvg, kAvg2x2 };

/// kGlobalAvg: [b x c x h x w] -> [b x c]; kAvg2x2 halves both spatial extents.
template <typename T>
Var pool(Graph<T>& g, Var x, PoolKind kind);

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Var concat(Graph<T>& g, const std::vector<Var>& parts, std::size_t axis);

/// `parts` equal contiguous slices along `axis`. Throws ShapeError if the extent is not divisible.
template <typename T>
std::vector<Var> split(Graph<T>& g, Var x, std::size_t axis, std::size_t parts);

/// Tensor-level helpers shared by several modules.
template <typename T>
Tensor<T> concat_tensors(const std::vector<const Tensor<T>*>& parts, std::size_t axis);
template <typename T>
std::vector<Tensor<T>> split_tensor(const Tensor<T>& x, std::size_t axis, std::size_t parts);

}  // namespace shakenorm

#endif  // SHAKENORM_OPS_HPP_
