#include "shakenorm/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace shakenorm {

std::string to_string(BlockLayout layout) {
  switch (layout) {
    case BlockLayout::kPostAct: return "PostAct";
    case BlockLayout::kRPreAct: return "RPreAct";
    case BlockLayout::kPreAct: return "PreAct";
    case BlockLayout::kPreActBN: return "PreActBN";
    case BlockLayout::kBNShake: return "BNShake";
  }
  return "?";
}

BlockLayout parse_layout(const std::string& name) {
  for (auto l : all_layouts()) {
    if (to_string(l) == name) return l;
  }
  throw std::invalid_argument("unknown block layout: " + name);
}

const std::vector<BlockLayout>& all_layouts() {
  static const std::vector<BlockLayout> kAll{BlockLayout::kPostAct, BlockLayout::kRPreAct, BlockLayout::kPreAct,
                                             BlockLayout::kPreActBN, BlockLayout::kBNShake};
  return kAll;
}

std::vector<BranchOp> branch_ops(BlockLayout layout) {
  using enum BranchOp;
  switch (layout) {
    case BlockLayout::kPostAct: return {kConv, kBatchNorm, kRelu, kConv, kBatchNorm};
    case BlockLayout::kRPreAct: return {kRelu, kConv, kBatchNorm, kRelu, kConv, kBatchNorm};
    case BlockLayout::kPreAct: return {kBatchNorm, kRelu, kConv, kBatchNorm, kRelu, kConv};
    case BlockLayout::kPreActBN: return {kBatchNorm, kRelu, kConv, kBatchNorm, kRelu, kConv, kBatchNorm};
    case BlockLayout::kBNShake: return {kRelu, kConv, kRelu, kConv, kBatchNorm};
  }
  return {};
}

std::string to_string(HeadKind h) { return h == HeadKind::kSoftmax ? "softmax" : "ccl"; }

HeadKind parse_head(const std::string& s) {
  if (s == "softmax") return HeadKind::kSoftmax;
  if (s == "ccl") return HeadKind::kCCL;
  throw std::invalid_argument("unknown head: " + s);
}

template <typename T>
ConvLayer<T>::ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dOptions o, Rng& rng)
    : opts(o) {
  if (o.groups == 0 || in_ch % o.groups != 0 || out_ch % o.groups != 0) {
    throw std::invalid_argument("conv layer: channels " + std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                                " not divisible by groups " + std::to_string(o.groups));
  }
  const std::size_t cin_g = in_ch / o.groups;
  const double fan_in = static_cast<double>(cin_g * kernel * kernel);
  weight = Parameter<T>(Tensor<T>::randn({out_ch, cin_g, kernel, kernel}, rng, std::sqrt(2.0 / fan_in)));
}

template <typename T>
ResidualBlock<T>::ResidualBlock(BlockLayout layout, std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                                BranchSpec branch, ShakeConfig shake, double gamma0, Rng& rng)
    : layout_(layout), in_ch_(in_ch), out_ch_(out_ch), stride_(stride), shake_(shake) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("residual block stride must be 1 or 2");
  if (in_ch == 0 || out_ch == 0) throw std::invalid_argument("residual block channels must be positive");
  shake_.validate();
  const std::size_t width = branch.width == 0 ? out_ch : branch.width;
  if (branch.groups == 0 || in_ch % branch.groups != 0 || width % branch.groups != 0 ||
      out_ch % branch.groups != 0) {
    throw std::invalid_argument("branch spec: groups " + std::to_string(branch.groups) +
                                " do not divide channels " + std::to_string(in_ch) + "/" + std::to_string(width) +
                                "/" + std::to_string(out_ch));
  }
  const BatchNormOptions bn_opts{.affine = true, .shift = true, .gamma0 = gamma0};
  for (std::size_t b = 0; b < shake_.n_branches; ++b) {
    Branch br;
    br.ops = branch_ops(layout);
    std::size_t channels = in_ch;  // channel count flowing at the current op
    std::size_t conv_index = 0;
    for (auto op : br.ops) {
      if (op == BranchOp::kConv) {
        const std::size_t next = conv_index == 0 ? width : out_ch;
        const Conv2dOptions o{conv_index == 0 ? stride : 1, 1, branch.groups};
        br.convs.emplace_back(channels, next, 3, o, rng);
        channels = next;
        ++conv_index;
      } else if (op == BranchOp::kBatchNorm) {
        br.norms.emplace_back(channels, bn_opts);
      }
    }
    branches_.push_back(std::move(br));
  }
  if (stride != 1 || in_ch != out_ch) {
    projection_.emplace(Projection{ConvLayer<T>(in_ch, out_ch, 1, Conv2dOptions{stride, 0, 1}, rng),
                                   BatchNormState<T>(out_ch, bn_opts)});
  }
}

template <typename T>
void ResidualBlock<T>::set_shake(const ShakeConfig& cfg) {
  cfg.validate();
  if (cfg.n_branches != branches_.size()) throw std::invalid_argument("shake config branch count mismatch");
  shake_ = cfg;
}

template <typename T>
bool ResidualBlock<T>::bn_before_shake() const {
  for (const auto& b : branches_) {
    if (b.ops.empty() || b.ops.back() != BranchOp::kBatchNorm) return false;
  }
  return !branches_.empty();
}

template <typename T>
Var ResidualBlock<T>::run_branch(Graph<T>& g, Branch& b, Var x, ForwardContext& ctx) {
  std::size_t ci = 0, ni = 0;
  Var h = x;
  for (auto op : b.ops) {
    switch (op) {
      case BranchOp::kConv: h = b.convs[ci++].forward(g, h); break;
      case BranchOp::kBatchNorm:
        h = bn_forward(g, h, b.norms[ni++], BatchNormCall{ctx.mode, ctx.update_running});
        break;
      case BranchOp::kRelu: h = relu(g, h); break;
    }
  }
  return h;
}

template <typename T>
std::vector<Var> ResidualBlock<T>::branch_outputs(Graph<T>& g, Var x, ForwardContext& ctx) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4 || xv.dim(1) != in_ch_) {
    throw ShapeError("residual block expects [b x " + std::to_string(in_ch_) + " x h x w], got " +
                     shape_to_string(xv.shape()));
  }
  std::vector<Var> outs;
  for (auto& b : branches_) outs.push_back(run_branch(g, b, x, ctx));
  return outs;
}

template <typename T>
Var ResidualBlock<T>::shortcut(Graph<T>& g, Var x, ForwardContext& ctx) {
  if (!projection_) return x;
  Var h = projection_->conv.forward(g, x);
  return bn_forward(g, h, projection_->norm, BatchNormCall{ctx.mode, ctx.update_running});
}

template <typename T>
Var ResidualBlock<T>::forward(Graph<T>& g, Var x, ForwardContext& ctx, ShakeRecord* record) {
  auto outs = branch_outputs(g, x, ctx);
  Rng fallback(0);
  Rng& rng = ctx.rng ? *ctx.rng : fallback;
  if (ctx.mode == Mode::kTrain && ctx.rng == nullptr && shake_.shaking()) {
    throw std::invalid_argument("train-mode shaking needs an RNG in the forward context");
  }
  Var mixed = shake_forward(g, outs, shake_, ctx.mode, rng, record);
  Var y = add(g, shortcut(g, x, ctx), mixed);
  if (layout_ == BlockLayout::kPostAct) y = relu(g, y);
  return y;
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamStore<T>& store) {
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const std::string bp = prefix + ".branch" + std::to_string(b);
    for (std::size_t i = 0; i < branches_[b].convs.size(); ++i) {
      store.add(bp + ".conv" + std::to_string(i) + ".weight", branches_[b].convs[i].weight);
    }
    for (std::size_t i = 0; i < branches_[b].norms.size(); ++i) {
      branches_[b].norms[i].collect(bp + ".bn" + std::to_string(i), store);
    }
  }
  if (projection_) {
    store.add(prefix + ".shortcut.conv.weight", projection_->conv.weight);
    projection_->norm.collect(prefix + ".shortcut.bn", store);
  }
}

template <typename T>
void ResidualBlock<T>::collect_stats(const std::string& prefix,
                                     std::vector<std::pair<std::string, RunningStats<T>*>>& out) {
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    for (std::size_t i = 0; i < branches_[b].norms.size(); ++i) {
      out.emplace_back(prefix + ".branch" + std::to_string(b) + ".bn" + std::to_string(i),
                       &branches_[b].norms[i].running);
    }
  }
  if (projection_) out.emplace_back(prefix + ".shortcut.bn", &projection_->norm.running);
}

template <typename T>
std::vector<BatchNormState<T>*> ResidualBlock<T>::norms() {
  std::vector<BatchNormState<T>*> out;
  for (auto& b : branches_) {
    for (auto& n : b.norms) out.push_back(&n);
  }
  if (projection_) out.push_back(&projection_->norm);
  return out;
}

template <typename T>
std::vector<ConvLayer<T>*> ResidualBlock<T>::convs() {
  std::vector<ConvLayer<T>*> out;
  for (auto& b : branches_) {
    for (auto& c : b.convs) out.push_back(&c);
  }
  if (projection_) out.push_back(&projection_->conv);
  return out;
}

std::size_t NetworkSpec::blocks_per_stage() const {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw std::invalid_argument("depth " + std::to_string(depth) +
                                " is not 6n+2 (three stages of two-conv blocks plus stem and classifier)");
  }
  return (depth - 2) / 6;
}

void NetworkSpec::validate() const {
  blocks_per_stage();
  if (cardinality == 0) throw std::invalid_argument("cardinality must be positive");
  if (base_width == 0 || stem_width == 0) throw std::invalid_argument("network widths must be positive");
  if (in_channels == 0 || classes < 2) throw std::invalid_argument("network needs input channels and >= 2 classes");
  if (shake.n_branches != cardinality) throw std::invalid_argument("shake branch count must equal cardinality");
  shake.validate();
}

template <typename T>
Network<T>::Network(const NetworkSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const std::size_t per_stage = spec_.blocks_per_stage();
  const BatchNormOptions bn_opts{.affine = true, .shift = true, .gamma0 = spec_.gamma0};
  stem_conv_ = ConvLayer<T>(spec_.in_channels, spec_.stem_width, 3, Conv2dOptions{1, 1, 1}, rng);
  stem_norm_ = BatchNormState<T>(spec_.stem_width, bn_opts);
  std::size_t channels = spec_.stem_width;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t width = spec_.base_width << stage;
    for (std::size_t i = 0; i < per_stage; ++i) {
      const bool last = stage == 2 && i + 1 == per_stage;
      const std::size_t out = last && spec_.embed_dim > 0 ? spec_.embed_dim : width;
      const std::size_t stride = stage > 0 && i == 0 ? 2 : 1;
      const BranchSpec branch{out, spec_.groups};
      blocks_.push_back(std::make_unique<ResidualBlock<T>>(spec_.layout, channels, out, stride, branch,
                                                           spec_.shake, spec_.gamma0, rng));
      channels = out;
    }
  }
  if (spec_.embed_dim == 0 &&
      (spec_.layout == BlockLayout::kPreAct || spec_.layout == BlockLayout::kPreActBN)) {
    tail_norm_.emplace(channels, bn_opts);
  }
  if (spec_.head == HeadKind::kCCL) {
    ccl_.emplace(channels, spec_.classes, rng);
  } else {
    const double std = std::sqrt(2.0 / static_cast<double>(channels));
    fc_weight_ = Parameter<T>(Tensor<T>::randn({spec_.classes, channels}, rng, std));
    fc_bias_ = Parameter<T>(Tensor<T>::zeros({spec_.classes}));
  }
}

template <typename T>
std::size_t Network<T>::feature_dim() const {
  return blocks_.back()->out_channels();
}

template <typename T>
typename Network<T>::Output Network<T>::forward(Graph<T>& g, Var x, ForwardContext& ctx) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4 || xv.dim(1) != spec_.in_channels) {
    throw ShapeError("network expects [b x " + std::to_string(spec_.in_channels) + " x h x w], got " +
                     shape_to_string(xv.shape()));
  }
  const BatchNormCall call{ctx.mode, ctx.update_running};
  Var h = stem_conv_.forward(g, x);
  h = bn_forward(g, h, stem_norm_, call);
  if (spec_.layout == BlockLayout::kPostAct) h = relu(g, h);
  for (auto& b : blocks_) h = b->forward(g, h, ctx);
  if (spec_.embed_dim == 0) {
    if (tail_norm_) h = bn_forward(g, h, *tail_norm_, call);
    if (spec_.layout != BlockLayout::kPostAct) h = relu(g, h);
  }
  Output out;
  out.features = pool(g, h, PoolKind::kGlobalAvg);
  if (ccl_) {
    Var phi = ccl_transform(g, out.features, ccl_->norm_state, call);
    out.logits = ccl_logits(g, phi, g.param(ccl_->class_weights));
  } else {
    out.logits = bias_add(g, linear(g, out.features, g.param(fc_weight_)), g.param(fc_bias_));
  }
  return out;
}

template <typename T>
ParamStore<T> Network<T>::params() {
  ParamStore<T> store;
  store.add("stem.conv.weight", stem_conv_.weight);
  stem_norm_.collect("stem.bn", store);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->collect("block" + std::to_string(i), store);
  if (tail_norm_) tail_norm_->collect("tail.bn", store);
  if (ccl_) {
    ccl_->collect("head", store);
  } else {
    store.add("head.fc.weight", fc_weight_);
    store.add("head.fc.bias", fc_bias_);
  }
  return store;
}

template <typename T>
std::vector<std::pair<std::string, RunningStats<T>*>> Network<T>::running_stats() {
  std::vector<std::pair<std::string, RunningStats<T>*>> out;
  out.emplace_back("stem.bn", &stem_norm_.running);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->collect_stats("block" + std::to_string(i), out);
  if (tail_norm_) out.emplace_back("tail.bn", &tail_norm_->running);
  if (ccl_) out.emplace_back("head.ccl", &ccl_->norm_state.running);
  return out;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Network<float>;
template class Network<double>;

}  // namespace shakenorm
