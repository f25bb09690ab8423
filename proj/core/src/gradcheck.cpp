#include "shakenorm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shakenorm {

namespace {

double eval_at(const ScalarFn& f, const Tensor<double>& x) {
  Graph<double> g(false);
  Var in = g.leaf(x, false);
  return g.value(f(g, in)).item();
}

void track(GradcheckResult& r, double analytic, double numeric, std::size_t index) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (err > r.max_rel_error || !std::isfinite(err)) {
    r.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
    r.worst_index = index;
  }
}

}  // namespace

GradcheckResult finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  Graph<double> g;
  Var in = g.leaf(x, true);
  Var loss = f(g, in);
  const double base = g.value(loss).item();
  if (eval_at(f, x) != base) {
    throw NondeterministicError("finite_diff_check: function is not deterministic under a fixed seed");
  }
  g.backward(loss);
  Tensor<double> analytic = g.grad(in) ? *g.grad(in) : Tensor<double>::zeros(x.shape());

  GradcheckResult result;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval_at(f, probe);
    probe[i] = orig - eps;
    const double down = eval_at(f, probe);
    probe[i] = orig;
    track(result, analytic[i], (up - down) / (2.0 * eps), i);
  }
  return result;
}

GradcheckResult finite_diff_check_params(const std::function<Var(Graph<double>&)>& loss,
                                         ParamStore<double>& params, double eps) {
  auto eval = [&]() {
    Graph<double> g(false);
    return g.value(loss(g)).item();
  };
  params.zero_grad();
  Graph<double> g;
  Var l = loss(g);
  const double base = g.value(l).item();
  if (eval() != base) {
    throw NondeterministicError("finite_diff_check: function is not deterministic under a fixed seed");
  }
  g.backward(l);

  GradcheckResult result;
  std::size_t offset = 0;
  for (auto& [name, p] : params) {
    if (!p->trainable) continue;
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      track(result, analytic[i], (up - down) / (2.0 * eps), offset + i);
    }
    offset += p->value.numel();
  }
  return result;
}

}  // namespace shakenorm
