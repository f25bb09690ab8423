#ifndef SHAKENORM_GRADCHECK_HPP_
#define SHAKENORM_GRADCHECK_HPP_

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shakenorm/autodiff.hpp"

namespace shakenorm {

/// Builds a scalar loss from an input variable. Must be deterministic: any RNG it uses has to
/// be reseeded inside the call.
using ScalarFn = std::function<Var(Graph<double>&, Var)>;

class NondeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// max_i |analytic_i - central_diff_i| / max(1, |analytic_i|) for d f / d x.
GradcheckResult finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-6);

/// Same metric over every trainable parameter reachable through `params`; `loss` builds the
/// scalar on a fresh graph each call.
GradcheckResult finite_diff_check_params(const std::function<Var(Graph<double>&)>& loss,
                                         ParamStore<double>& params, double eps = 1e-6);

}  // namespace shakenorm

#endif  // SHAKENORM_GRADCHECK_HPP_
