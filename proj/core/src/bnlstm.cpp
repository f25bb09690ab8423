#include "shakenorm/bnlstm.hpp"

#include <cmath>
#include <stdexcept>

namespace shakenorm {

template <typename T>
BNLSTMCell<T>::BNLSTMCell(const BNLSTMOptions& opts, Rng& rng) : opts_(opts) {
  if (opts.input == 0 || opts.hidden == 0 || opts.max_steps == 0) {
    throw std::invalid_argument("BNLSTMCell: input, hidden and max_steps must be positive");
  }
  const std::size_t h = opts.hidden, d = opts.input;
  w_x = Parameter<T>(Tensor<T>::randn({4 * h, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  w_h = Parameter<T>(Tensor<T>::randn({4 * h, h}, rng, 1.0 / std::sqrt(static_cast<double>(h))));
  Tensor<T> bias = Tensor<T>::zeros({4 * h});
  for (std::size_t k = 0; k < h; ++k) bias[k] = static_cast<T>(opts.forget_bias);
  b = Parameter<T>(std::move(bias));

  BatchNormOptions scale_only;
  scale_only.shift = false;
  scale_only.gamma0 = opts.gamma0;
  BatchNormOptions full;
  full.gamma0 = opts.gamma0;
  bn_x = BatchNormState<T>(4 * h, scale_only);
  bn_h = BatchNormState<T>(4 * h, scale_only);
  bn_c = BatchNormState<T>(h, full);
  stats_x_.assign(opts.max_steps, RunningStats<T>(4 * h));
  stats_h_.assign(opts.max_steps, RunningStats<T>(4 * h));
  stats_c_.assign(opts.max_steps, RunningStats<T>(h));
}

template <typename T>
typename BNLSTMCell<T>::State BNLSTMCell<T>::initial_state(Graph<T>& g, std::size_t batch) const {
  return {g.constant(Tensor<T>::zeros({batch, opts_.hidden})), g.constant(Tensor<T>::zeros({batch, opts_.hidden}))};
}

template <typename T>
typename BNLSTMCell<T>::State BNLSTMCell<T>::step(Graph<T>& g, Var x_t, State prev, std::size_t t,
                                                  BatchNormCall call) {
  const auto& xs = g.value(x_t).shape();
  const auto& hs = g.value(prev.h).shape();
  const auto& cs = g.value(prev.c).shape();
  if (xs.size() != 2 || xs[1] != opts_.input || hs.size() != 2 || hs[1] != opts_.hidden || hs[0] != xs[0] ||
      cs != hs) {
    throw ShapeError("bnlstm_step: x " + shape_to_string(xs) + ", h " + shape_to_string(hs) + ", c " +
                     shape_to_string(cs) + " for D=" + std::to_string(opts_.input) +
                     ", H=" + std::to_string(opts_.hidden));
  }
  const std::size_t s = stat_index(t);
  Var wx = bn_forward(g, linear(g, x_t, g.param(w_x)), bn_x, call, &stats_x_[s]);
  Var wh = bn_forward(g, linear(g, prev.h, g.param(w_h)), bn_h, call, &stats_h_[s]);
  Var gates = bias_add(g, add(g, wh, wx), g.param(b));
  auto parts = split(g, gates, 1, 4);
  Var f = sigmoid(g, parts[0]);
  Var i = sigmoid(g, parts[1]);
  Var o = sigmoid(g, parts[2]);
  Var cand = tanh(g, parts[3]);
  Var c = add(g, mul(g, f, prev.c), mul(g, i, cand));
  Var h = mul(g, o, tanh(g, bn_forward(g, c, bn_c, call, &stats_c_[s])));
  return {h, c};
}

template <typename T>
std::vector<Var> BNLSTMCell<T>::forward(Graph<T>& g, Var sequence, BatchNormCall call) {
  const auto shape = g.value(sequence).shape();
  if (shape.size() != 3 || shape[2] != opts_.input) {
    throw ShapeError("bnlstm_forward: sequence must be [T x batch x " + std::to_string(opts_.input) + "], got " +
                     shape_to_string(shape));
  }
  const std::size_t steps = shape[0], batch = shape[1];
  State state = initial_state(g, batch);
  std::vector<Var> outputs;
  outputs.reserve(steps);
  auto slices = steps == 1 ? std::vector<Var>{sequence} : split(g, sequence, 0, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var x_t = reshape(g, slices[t], {batch, opts_.input});
    state = step(g, x_t, state, t, call);
    outputs.push_back(state.h);
  }
  return outputs;
}

template <typename T>
void BNLSTMCell<T>::collect(const std::string& prefix, ParamStore<T>& store) {
  store.add(prefix + ".w_x", w_x);
  store.add(prefix + ".w_h", w_h);
  store.add(prefix + ".b", b);
  bn_x.collect(prefix + ".bn_x", store);
  bn_h.collect(prefix + ".bn_h", store);
  bn_c.collect(prefix + ".bn_c", store);
}

template <typename T>
std::vector<std::pair<std::string, RunningStats<T>*>> BNLSTMCell<T>::running_stats() {
  std::vector<std::pair<std::string, RunningStats<T>*>> out;
  for (std::size_t t = 0; t < opts_.max_steps; ++t) {
    const std::string suffix = ".t" + std::to_string(t);
    out.emplace_back("bn_x" + suffix, &stats_x_[t]);
    out.emplace_back("bn_h" + suffix, &stats_h_[t]);
    out.emplace_back("bn_c" + suffix, &stats_c_[t]);
  }
  return out;
}

template <typename T>
AddingBatch<T> make_adding_batch(std::size_t steps, std::size_t batch, Rng& rng) {
  if (steps < 2 || batch == 0) throw std::invalid_argument("adding task needs at least 2 steps and 1 sample");
  AddingBatch<T> out{Tensor<T>::zeros({steps, batch, 2}), Tensor<T>::zeros({batch, 1})};
  std::uniform_real_distribution<double> value(0.0, 1.0);
  const std::size_t half = steps / 2;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < steps; ++t) out.sequence.at({t, n, 0}) = static_cast<T>(value(rng));
    const std::size_t first = std::uniform_int_distribution<std::size_t>(0, half - 1)(rng);
    const std::size_t second = std::uniform_int_distribution<std::size_t>(half, steps - 1)(rng);
    out.sequence.at({first, n, 1}) = T(1);
    out.sequence.at({second, n, 1}) = T(1);
    out.target.at({n, 0}) = out.sequence.at({first, n, 0}) + out.sequence.at({second, n, 0});
  }
  return out;
}

template class BNLSTMCell<float>;
template class BNLSTMCell<double>;
template AddingBatch<float> make_adding_batch<float>(std::size_t, std::size_t, Rng&);
template AddingBatch<double> make_adding_batch<double>(std::size_t, std::size_t, Rng&);

}  // namespace shakenorm
