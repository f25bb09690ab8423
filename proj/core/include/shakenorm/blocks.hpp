#ifndef SHAKENORM_BLOCKS_HPP_
#define SHAKENORM_BLOCKS_HPP_

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/normalization.hpp"
#include "shakenorm/ops.hpp"
#include "shakenorm/shaking.hpp"

namespace shakenorm {

/// Residual block layouts. Per-branch op order:
///   PostAct   Conv-BN-ReLU-Conv-BN      (ReLU after the addition)
///   RPreAct   ReLU-Conv-BN-ReLU-Conv-BN
///   PreAct    BN-ReLU-Conv-BN-ReLU-Conv
///   PreActBN  BN-ReLU-Conv-BN-ReLU-Conv-BN
///   BNShake   ReLU-Conv-ReLU-Conv-BN
enum class BlockLayout { kPostAct, kRPreAct, kPreAct, kPreActBN, kBNShake };

std::string to_string(BlockLayout layout);
/// Accepts the names above (case-sensitive). Throws std::invalid_argument otherwise.
BlockLayout parse_layout(const std::string& name);
const std::vector<BlockLayout>& all_layouts();

enum class BranchOp { kConv, kBatchNorm, kRelu };

/// Static op sequence of one branch for `layout`.
std::vector<BranchOp> branch_ops(BlockLayout layout);

struct BranchSpec {
  std::size_t width = 0;  // channels between the two convolutions; 0 means out_ch
  std::size_t groups = 1;
};

struct ForwardContext {
  Mode mode = Mode::kTrain;
  Rng* rng = nullptr;
  /// Train mode only. Embedding extraction runs train-mode forwards without touching running stats.
  bool update_running = true;
};

/// 3x3 (or 1x1) convolution without bias, fan-in scaled Gaussian init.
template <typename T>
struct ConvLayer {
  ConvLayer() = default;
  ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dOptions opts, Rng& rng);
  Parameter<T> weight;
  Conv2dOptions opts;
  Var forward(Graph<T>& g, Var x) { return conv2d(g, x, g.param(weight), opts); }
};

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(BlockLayout layout, std::size_t in_ch, std::size_t out_ch, std::size_t stride, BranchSpec branch,
                ShakeConfig shake, double gamma0, Rng& rng);

  BlockLayout layout() const { return layout_; }
  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }
  std::size_t stride() const { return stride_; }
  std::size_t branch_count() const { return branches_.size(); }
  bool identity_shortcut() const { return !projection_.has_value(); }
  const ShakeConfig& shake() const { return shake_; }
  void set_shake(const ShakeConfig& cfg);

  /// Op sequence of branch `i` as built (for static inspection).
  const std::vector<BranchOp>& ops(std::size_t i) const { return branches_.at(i).ops; }
  /// True when the op feeding the shake combination is a BatchNorm in every branch.
  bool bn_before_shake() const;

  Var forward(Graph<T>& g, Var x, ForwardContext& ctx, ShakeRecord* record = nullptr);
  /// Branch bodies only (before shaking), for inspection and oracles.
  std::vector<Var> branch_outputs(Graph<T>& g, Var x, ForwardContext& ctx);
  Var shortcut(Graph<T>& g, Var x, ForwardContext& ctx);

  void collect(const std::string& prefix, ParamStore<T>& store);
  void collect_stats(const std::string& prefix, std::vector<std::pair<std::string, RunningStats<T>*>>& out);

  /// Mutable access for tests and initialization.
  std::vector<BatchNormState<T>*> norms();
  std::vector<ConvLayer<T>*> convs();

 private:
  struct Branch {
    std::vector<BranchOp> ops;
    std::vector<ConvLayer<T>> convs;
    std::vector<BatchNormState<T>> norms;
  };
  struct Projection {
    ConvLayer<T> conv;
    BatchNormState<T> norm;
  };

  Var run_branch(Graph<T>& g, Branch& b, Var x, ForwardContext& ctx);

  BlockLayout layout_;
  std::size_t in_ch_, out_ch_, stride_;
  ShakeConfig shake_;
  std::vector<Branch> branches_;
  std::optional<Projection> projection_;
};

enum class HeadKind { kSoftmax, kCCL };
std::string to_string(HeadKind h);
HeadKind parse_head(const std::string& s);

struct NetworkSpec {
  std::size_t depth = 20;
  std::size_t cardinality = 2;
  std::size_t base_width = 4;   // branch channels in the first stage; doubled per stage
  std::size_t stem_width = 16;
  std::size_t groups = 1;       // grouped convs inside each branch
  std::size_t in_channels = 1;
  std::size_t classes = 10;
  BlockLayout layout = BlockLayout::kPreActBN;
  std::size_t embed_dim = 0;    // 0: no embedding tap; otherwise the last block's output width
  HeadKind head = HeadKind::kSoftmax;
  ShakeConfig shake;
  double gamma0 = 1.0;

  /// (depth - 2) / 6 blocks per stage. Throws std::invalid_argument on inconsistent depth.
  std::size_t blocks_per_stage() const;
  void validate() const;
};

template <typename T>
class Network {
 public:
  Network(const NetworkSpec& spec, Rng& rng);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  struct Output {
    Var logits;
    Var features;  // pooled features; the embedding when the spec has embed_dim
  };

  const NetworkSpec& spec() const { return spec_; }
  bool has_embedding_tap() const { return spec_.embed_dim > 0; }
  std::size_t feature_dim() const;

  Output forward(Graph<T>& g, Var x, ForwardContext& ctx);

  /// Fresh named view of every trainable parameter.
  ParamStore<T> params();
  /// Named running statistics of every BatchNorm site.
  std::vector<std::pair<std::string, RunningStats<T>*>> running_stats();

  std::vector<std::unique_ptr<ResidualBlock<T>>>& blocks() { return blocks_; }

 private:
  NetworkSpec spec_;
  ConvLayer<T> stem_conv_;
  BatchNormState<T> stem_norm_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> blocks_;
  std::optional<BatchNormState<T>> tail_norm_;
  Parameter<T> fc_weight_;
  Parameter<T> fc_bias_;
  std::optional<CCLHead<T>> ccl_;
};

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class Network<float>;
extern template class Network<double>;

}  // namespace shakenorm

#endif  // SHAKENORM_BLOCKS_HPP_
