#ifndef SHAKENORM_NORMALIZATION_HPP_
#define SHAKENORM_NORMALIZATION_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/tensor.hpp"

namespace shakenorm {

/// Running statistics of one normalization site.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  RunningStats() = default;
  explicit RunningStats(std::size_t channels)
      : mean(Tensor<T>::zeros({channels})), var(Tensor<T>::ones({channels})) {}
};

struct BatchNormOptions {
  bool affine = true;     // trainable scale gamma
  bool shift = true;      // trainable shift beta; ignored when affine == false
  double gamma0 = 1.0;    // initial value of every gamma component
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization state: y = gamma * (x - o) / sqrt(var + eps) + beta.
/// With affine == false gamma is pinned to 1 and beta to 0 (the CCL transform).
template <typename T>
class BatchNormState {
 public:
  BatchNormState() = default;
  BatchNormState(std::size_t channels, BatchNormOptions opts = {});

  std::size_t channels() const { return channels_; }
  bool affine() const { return opts_.affine; }
  bool has_shift() const { return opts_.affine && opts_.shift; }
  double gamma0() const { return opts_.gamma0; }
  T momentum() const { return static_cast<T>(opts_.momentum); }
  T eps() const { return static_cast<T>(opts_.eps); }

  Parameter<T> gamma;
  Parameter<T> beta;
  RunningStats<T> running;

  /// Registers gamma (and beta when trainable) under `prefix`.
  void collect(const std::string& prefix, ParamStore<T>& store);

 private:
  std::size_t channels_ = 0;
  BatchNormOptions opts_;
};

struct BatchNormCall {
  Mode mode = Mode::kTrain;
  /// Train mode only: whether batch statistics are folded into the running statistics.
  bool update_running = true;
};

/// Normalizes over every axis except axis 1 (rank 2: [n x c]; rank 4: [n x c x h x w]).
/// `stats` overrides the state's own running statistics (per-timestep statistics).
template <typename T>
Var bn_forward(Graph<T>& g, Var x, BatchNormState<T>& state, BatchNormCall call = {},
               RunningStats<T>* stats = nullptr);

/// Tensor-in, tensor-out convenience form; no gradient tracking.
template <typename T>
Tensor<T> bn_forward(const Tensor<T>& x, BatchNormState<T>& state, Mode mode);

/// Phi(x) = (x - o) / sigma. Requires an affine-free state.
template <typename T>
Var ccl_transform(Graph<T>& g, Var x, BatchNormState<T>& state, BatchNormCall call = {});

/// Classifier head supervised through the CCL transform: logits = Phi . normalize(w_j).
template <typename T>
struct CCLHead {
  CCLHead() = default;
  CCLHead(std::size_t dim, std::size_t classes, Rng& rng);

  Parameter<T> class_weights;  // [classes x dim]
  BatchNormState<T> norm_state;

  void collect(const std::string& prefix, ParamStore<T>& store);
};

/// logit_{i,j} = |phi_i| cos(theta_ij) = phi_i . w_j / |w_j|.
template <typename T>
Var ccl_logits(Graph<T>& g, Var phi, Var class_weights);

/// Mean negative log-softmax of the true class; gradient (softmax - onehot) / batch.
template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, const std::vector<std::size_t>& labels);

extern template class BatchNormState<float>;
extern template class BatchNormState<double>;
extern template struct CCLHead<float>;
extern template struct CCLHead<double>;

}  // namespace shakenorm

#endif  // SHAKENORM_NORMALIZATION_HPP_
