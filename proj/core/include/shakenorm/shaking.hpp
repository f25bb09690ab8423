#ifndef SHAKENORM_SHAKING_HPP_
#define SHAKENORM_SHAKING_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/tensor.hpp"

namespace shakenorm {

enum class ShakeForward { kShake, kEven };
enum class ShakeBackward { kShake, kEven, kKeep };
enum class Granularity { kPerBatch, kPerImage };

struct ShakeConfig {
  std::size_t n_branches = 2;
  ShakeForward forward = ShakeForward::kShake;
  ShakeBackward backward = ShakeBackward::kShake;
  Granularity granularity = Granularity::kPerImage;
  std::size_t subbands = 1;
  double p_off = 0.0;

  /// Plain multi-branch average: even forward and even backward.
  static ShakeConfig disabled(std::size_t n_branches) {
    return ShakeConfig{n_branches, ShakeForward::kEven, ShakeBackward::kEven, Granularity::kPerImage, 1, 0.0};
  }
  bool shaking() const { return forward == ShakeForward::kShake || backward != ShakeBackward::kEven; }
  void validate() const;
};

std::string to_string(ShakeForward m);
std::string to_string(ShakeBackward m);
std::string to_string(Granularity m);
ShakeForward parse_shake_forward(const std::string& s);
ShakeBackward parse_shake_backward(const std::string& s);
Granularity parse_granularity(const std::string& s);

/// A point of the (n-1)-simplex.
struct SimplexSample {
  std::vector<double> coefficients;
};

/// Uniform draw on the (n-1)-simplex from the gaps between n-1 sorted uniforms.
/// n == 2 gives [u, 1 - u] with u ~ U[0, 1].
SimplexSample sample_simplex(std::size_t n, Rng& rng);

/// Returns true ("on") with probability 1 - p_off. Consumes no randomness when p_off == 0.
bool stochastic_gate(const ShakeConfig& cfg, Rng& rng);

/// Coefficients and metadata captured by a train-mode shake forward.
/// Layout of `alpha`: [band][row][branch], rows = batch (per image) or 1 (per batch).
struct ShakeRecord {
  bool has_metadata = false;
  Granularity granularity = Granularity::kPerImage;
  std::size_t rows = 0;
  std::size_t bands = 1;
  std::size_t n_branches = 0;
  bool gated_off = false;
  std::vector<double> alpha;
  std::uint64_t backward_seed = 0;

  double coefficient(std::size_t band, std::size_t row, std::size_t branch) const {
    return alpha[(band * rows + row) * n_branches + branch];
  }
};

/// Axis that sub-bands partition: height for rank-4 maps, features for rank-2 vectors.
std::size_t subband_axis(const Shape& shape);

/// Contiguous equal partition along the sub-band axis.
template <typename T>
std::vector<Var> subband_split(Graph<T>& g, Var x, std::size_t bands);
template <typename T>
Var subband_concat(Graph<T>& g, const std::vector<Var>& bands);

/// Train: sum_n alpha_n * branch_n with coefficients drawn per the config (recorded on the node).
/// Eval: (1/N) * sum_n branch_n, no randomness consumed. `record_out` receives the draws.
template <typename T>
Var shake_forward(Graph<T>& g, const std::vector<Var>& branches, const ShakeConfig& cfg, Mode mode, Rng& rng,
                  ShakeRecord* record_out = nullptr);

/// Tensor-level combination with explicit coefficients (the record's layout).
template <typename T>
Tensor<T> shake_combine(const std::vector<const Tensor<T>*>& branches, const ShakeRecord& coeffs);

/// Per-branch gradients for `upstream`: backward kShake draws fresh beta from `rng` with the
/// forward granularity and band structure; kKeep reuses alpha; kEven uses 1/N.
template <typename T>
std::vector<Tensor<T>> shake_backward(const Tensor<T>& upstream, const ShakeRecord& record,
                                      const ShakeConfig& cfg, Rng& rng);

}  // namespace shakenorm

#endif  // SHAKENORM_SHAKING_HPP_
