#include "shakenorm/normalization.hpp"

#include <cmath>
#include <stdexcept>

#include "shakenorm/ops.hpp"

namespace shakenorm {

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels, BatchNormOptions opts)
    : running(channels), channels_(channels), opts_(opts) {
  if (channels == 0) throw ShapeError("batch norm needs at least one channel");
  if (!(opts.momentum > 0.0 && opts.momentum <= 1.0)) {
    throw std::invalid_argument("batch norm momentum must lie in (0, 1]");
  }
  if (!(opts.eps > 0.0)) throw std::invalid_argument("batch norm eps must be positive");
  if (!opts_.affine) opts_.shift = false;
  const T g0 = opts_.affine ? static_cast<T>(opts_.gamma0) : T(1);
  gamma = Parameter<T>(Tensor<T>({channels}, g0), opts_.affine);
  beta = Parameter<T>(Tensor<T>::zeros({channels}), has_shift());
}

template <typename T>
void BatchNormState<T>::collect(const std::string& prefix, ParamStore<T>& store) {
  if (opts_.affine) store.add(prefix + ".gamma", gamma);
  if (has_shift()) store.add(prefix + ".beta", beta);
}

template <typename T>
Var bn_forward(Graph<T>& g, Var x, BatchNormState<T>& state, BatchNormCall call, RunningStats<T>* stats) {
  const auto& xv = g.value(x);
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ShapeError("batch norm expects rank 2 or 4 input, got " + shape_to_string(xv.shape()));
  }
  const std::size_t channels = xv.dim(1);
  if (channels != state.channels()) {
    throw ShapeError("batch norm channel mismatch: input " + shape_to_string(xv.shape()) + " vs state [" +
                     std::to_string(state.channels()) + "]");
  }
  RunningStats<T>& rs = stats ? *stats : state.running;
  const std::size_t batch = xv.dim(0);
  const std::size_t inner = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  const std::size_t count = batch * inner;
  const bool train = call.mode == Mode::kTrain;
  if (train && count < 2) {
    throw std::invalid_argument("batch norm in train mode needs at least two values per channel");
  }

  std::vector<T> mean(channels), inv_std(channels);
  if (train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.raw() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.raw() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps())));
      if (call.update_running) {
        const T m = state.momentum();
        rs.mean[c] = (T(1) - m) * rs.mean[c] + m * static_cast<T>(mu);
        rs.var[c] = (T(1) - m) * rs.var[c] + m * static_cast<T>(var);
      }
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rs.mean[c];
      inv_std[c] = T(1) / std::sqrt(rs.var[c] + state.eps());
    }
  }

  const bool affine = state.affine();
  const bool shift = state.has_shift();
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * inner;
      const T gam = affine ? state.gamma.value[c] : T(1);
      const T bet = shift ? state.beta.value[c] : T(0);
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gam * h + bet;
      }
    }
  }

  std::vector<Var> inputs{x};
  Var gvar, bvar;
  if (affine && g.grad_enabled()) {
    gvar = g.param(state.gamma);
    inputs.push_back(gvar);
  }
  if (shift && g.grad_enabled()) {
    bvar = g.param(state.beta);
    inputs.push_back(bvar);
  }
  Tensor<T> gamma_value = affine ? state.gamma.value : Tensor<T>::ones({channels});

  auto backward = [x, gvar, bvar, train, batch, channels, inner, count, inv_std, xhat = std::move(xhat),
                   gamma_value = std::move(gamma_value)](Graph<T>& gr, const Tensor<T>& go) {
    std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_dy[c] += go[base + i];
          sum_dy_xhat[c] += go[base + i] * xhat[base + i];
        }
      }
    }
    if (gvar.valid() && gr.requires_grad(gvar)) {
      auto& dg = gr.grad_buffer(gvar);
      for (std::size_t c = 0; c < channels; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
    }
    if (bvar.valid() && gr.requires_grad(bvar)) {
      auto& db = gr.grad_buffer(bvar);
      for (std::size_t c = 0; c < channels; ++c) db[c] += static_cast<T>(sum_dy[c]);
    }
    if (!gr.requires_grad(x)) return;
    auto& dx = gr.grad_buffer(x);
    const double inv_count = 1.0 / static_cast<double>(count);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (n * channels + c) * inner;
        const T scale = gamma_value[c] * inv_std[c];
        if (train) {
          // dx = gamma/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
          const T mdy = static_cast<T>(sum_dy[c] * inv_count);
          const T mdyx = static_cast<T>(sum_dy_xhat[c] * inv_count);
          for (std::size_t i = 0; i < inner; ++i) {
            dx[base + i] += scale * (go[base + i] - mdy - xhat[base + i] * mdyx);
          }
        } else {
          for (std::size_t i = 0; i < inner; ++i) dx[base + i] += scale * go[base + i];
        }
      }
    }
  };
  return g.record(std::move(out), inputs, backward, "batch_norm");
}

template <typename T>
Tensor<T> bn_forward(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  Graph<T> g(false);
  Var in = g.constant(x);
  return g.value(bn_forward(g, in, state, BatchNormCall{mode, true}));
}

template <typename T>
Var ccl_transform(Graph<T>& g, Var x, BatchNormState<T>& state, BatchNormCall call) {
  if (state.affine()) {
    throw std::invalid_argument("ccl_transform requires a batch norm state without affine parameters");
  }
  return bn_forward(g, x, state, call);
}

template <typename T>
CCLHead<T>::CCLHead(std::size_t dim, std::size_t classes, Rng& rng)
    : class_weights(Tensor<T>::randn({classes, dim}, rng, std::sqrt(2.0 / static_cast<double>(dim)))),
      norm_state(dim, BatchNormOptions{.affine = false}) {}

template <typename T>
void CCLHead<T>::collect(const std::string& prefix, ParamStore<T>& store) {
  store.add(prefix + ".class_weights", class_weights);
}

template <typename T>
Var ccl_logits(Graph<T>& g, Var phi, Var class_weights) {
  const auto& pv = g.value(phi);
  const auto& wv = g.value(class_weights);
  if (pv.rank() != 2 || wv.rank() != 2 || pv.dim(1) != wv.dim(1)) {
    throw ShapeError("ccl_logits: features " + shape_to_string(pv.shape()) + " vs class weights " +
                     shape_to_string(wv.shape()));
  }
  return linear(g, phi, normalize_rows(g, class_weights));
}

template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, const std::vector<std::size_t>& labels) {
  const auto& lv = g.value(logits);
  if (lv.rank() != 2) throw ShapeError("softmax_xent expects [batch x classes], got " + shape_to_string(lv.shape()));
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  Tensor<T> probs(lv.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw std::out_of_range("softmax_xent: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    const T* row = lv.raw() + i * classes;
    T mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(z);
    loss += lse - static_cast<double>(row[labels[i]]);
    for (std::size_t j = 0; j < classes; ++j) {
      probs[i * classes + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
    }
  }
  loss /= static_cast<double>(batch);
  return g.record(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                  [logits, labels, batch, classes, probs = std::move(probs)](Graph<T>& gr, const Tensor<T>& go) {
                    const T scale = go[0] / static_cast<T>(batch);
                    auto& d = gr.grad_buffer(logits);
                    for (std::size_t i = 0; i < batch; ++i) {
                      for (std::size_t j = 0; j < classes; ++j) {
                        const T onehot = j == labels[i] ? T(1) : T(0);
                        d[i * classes + j] += scale * (probs[i * classes + j] - onehot);
                      }
                    }
                  },
                  "softmax_xent");
}

template class BatchNormState<float>;
template class BatchNormState<double>;
template struct CCLHead<float>;
template struct CCLHead<double>;

#define SHAKENORM_INSTANTIATE_NORM(T)                                                              \
  template Var bn_forward<T>(Graph<T>&, Var, BatchNormState<T>&, BatchNormCall, RunningStats<T>*); \
  template Tensor<T> bn_forward<T>(const Tensor<T>&, BatchNormState<T>&, Mode);                    \
  template Var ccl_transform<T>(Graph<T>&, Var, BatchNormState<T>&, BatchNormCall);                \
  template Var ccl_logits<T>(Graph<T>&, Var, Var);                                                 \
  template Var softmax_xent<T>(Graph<T>&, Var, const std::vector<std::size_t>&);

SHAKENORM_INSTANTIATE_NORM(float)
SHAKENORM_INSTANTIATE_NORM(double)

}  // namespace shakenorm
