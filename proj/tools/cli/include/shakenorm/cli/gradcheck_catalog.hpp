#ifndef SHAKENORM_CLI_GRADCHECK_CATALOG_HPP_
#define SHAKENORM_CLI_GRADCHECK_CATALOG_HPP_

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "shakenorm/gradcheck.hpp"

namespace shakenorm::cli {

/// One finite-difference check. `run` returns the worst relative error over the
/// target's inputs and parameters.
struct GradTarget {
  std::string group;  // layer, block or cell
  std::string name;
  std::function<double()> run;
};

/// Targets of `group` ("layer", "block", "cell" or "all"). Throws std::invalid_argument otherwise.
std::vector<GradTarget> gradcheck_catalog(const std::string& group);

struct GradcheckOutcome {
  std::size_t failures = 0;
  double worst = 0.0;
};

/// Runs every target, printing one table row each and a summary listing failing targets.
GradcheckOutcome run_gradchecks(const std::vector<GradTarget>& targets, std::ostream& out, double tol = 1e-4);

}  // namespace shakenorm::cli

#endif  // SHAKENORM_CLI_GRADCHECK_CATALOG_HPP_
