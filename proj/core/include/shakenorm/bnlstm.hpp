#ifndef SHAKENORM_BNLSTM_HPP_
#define SHAKENORM_BNLSTM_HPP_

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/normalization.hpp"
#include "shakenorm/ops.hpp"

namespace shakenorm {

struct BNLSTMOptions {
  std::size_t input = 2;
  std::size_t hidden = 32;
  double gamma0 = 0.1;        // initial gamma of all three normalizations
  double forget_bias = 1.0;   // initial bias of the f gate
  std::size_t max_steps = 64; // timesteps with their own statistics; later steps reuse the last
};

/// LSTM cell with batch-normalized input, recurrent and cell terms.
/// Gate blocks of the 4H pre-activation are ordered (f, i, o, g).
template <typename T>
class BNLSTMCell {
 public:
  BNLSTMCell(const BNLSTMOptions& opts, Rng& rng);

  struct State {
    Var h;
    Var c;
  };

  std::size_t input_size() const { return opts_.input; }
  std::size_t hidden_size() const { return opts_.hidden; }
  const BNLSTMOptions& options() const { return opts_; }

  /// One step at timestep t (selects the per-timestep statistics).
  State step(Graph<T>& g, Var x_t, State prev, std::size_t t, BatchNormCall call = {});
  /// Zero initial state for a batch.
  State initial_state(Graph<T>& g, std::size_t batch) const;
  /// sequence [T x batch x D]; returns h_1..h_T, each [batch x H].
  std::vector<Var> forward(Graph<T>& g, Var sequence, BatchNormCall call = {});

  void collect(const std::string& prefix, ParamStore<T>& store);
  std::vector<std::pair<std::string, RunningStats<T>*>> running_stats();

  Parameter<T> w_x;  // [4H x D]
  Parameter<T> w_h;  // [4H x H]
  Parameter<T> b;    // [4H]
  BatchNormState<T> bn_x, bn_h, bn_c;

 private:
  std::size_t stat_index(std::size_t t) const { return t < opts_.max_steps ? t : opts_.max_steps - 1; }

  BNLSTMOptions opts_;
  std::vector<RunningStats<T>> stats_x_, stats_h_, stats_c_;
};

/// Adding problem: channel 0 holds U(0,1) values, channel 1 marks one position in each half.
/// The target is the sum of the two marked values.
template <typename T>
struct AddingBatch {
  Tensor<T> sequence;  // [T x batch x 2]
  Tensor<T> target;    // [batch x 1]
};

template <typename T>
AddingBatch<T> make_adding_batch(std::size_t steps, std::size_t batch, Rng& rng);

extern template class BNLSTMCell<float>;
extern template class BNLSTMCell<double>;

}  // namespace shakenorm

#endif  // SHAKENORM_BNLSTM_HPP_
