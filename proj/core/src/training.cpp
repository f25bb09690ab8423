#include "shakenorm/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace shakenorm {

double cosine_lr(std::size_t t, std::size_t total, double lr0) {
  if (t > total) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(t) + " beyond total " + std::to_string(total));
  }
  if (total == 0) return lr0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

template <typename T>
void SgdOptimizer<T>::step(ParamStore<T>& params, double lr) {
  const T m = static_cast<T>(opts_.momentum);
  const T wd = static_cast<T>(opts_.weight_decay);
  const T rate = static_cast<T>(lr);
  for (auto& [name, p] : params) {
    if (!p->trainable) continue;
    require_same_shape(p->value.shape(), p->grad.shape(), ("sgd_step " + name).c_str());
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Tensor<T>::zeros(p->value.shape())).first;
    require_same_shape(p->value.shape(), it->second.shape(), ("sgd_step velocity " + name).c_str());
    T* v = it->second.raw();
    T* w = p->value.raw();
    const T* g = p->grad.raw();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      v[i] = m * v[i] + g[i] + wd * w[i];
      w[i] -= rate * v[i];
    }
  }
}

template <typename T>
const Tensor<T>* SgdOptimizer<T>::velocity(const std::string& name) const {
  auto it = velocity_.find(name);
  return it == velocity_.end() ? nullptr : &it->second;
}

double unweighted_accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                           std::size_t classes, std::vector<std::size_t>* excluded) {
  if (labels.empty()) throw std::invalid_argument("unweighted_accuracy: empty input");
  if (preds.size() != labels.size()) throw ShapeError("unweighted_accuracy: prediction/label count mismatch");
  std::vector<std::size_t> support(classes, 0), hits(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes || preds[i] >= classes) {
      throw std::out_of_range("unweighted_accuracy: class index outside [0, " + std::to_string(classes) + ")");
    }
    ++support[labels[i]];
    if (preds[i] == labels[i]) ++hits[labels[i]];
  }
  double total = 0.0;
  std::size_t present = 0;
  if (excluded) excluded->clear();
  for (std::size_t k = 0; k < classes; ++k) {
    if (support[k] == 0) {
      if (excluded) excluded->push_back(k);
      continue;
    }
    total += static_cast<double>(hits[k]) / static_cast<double>(support[k]);
    ++present;
  }
  return 100.0 * total / static_cast<double>(present);
}

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics to " + path.string());
  out << "epoch,lr,train_loss,train_ua,valid_ua,gap\n";
  char line[256];
  for (const auto& e : metrics.epochs) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9f,%.9f,%.9f,%.9f\n", e.epoch, e.lr, e.train_loss, e.train_ua,
                  e.valid_ua, e.gap);
    out << line;
  }
  if (!out) throw std::runtime_error("failed writing metrics to " + path.string());
}

RunMetrics read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics from " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,lr,train_loss,train_ua,valid_ua,gap") {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  RunMetrics m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochMetrics e;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &e.epoch, &e.lr, &e.train_loss, &e.train_ua,
                    &e.valid_ua, &e.gap) != 6) {
      throw std::runtime_error(path.string() + ": malformed metrics row: " + line);
    }
    m.epochs.push_back(e);
  }
  return m;
}

namespace {

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  const T* p = logits.raw() + row * k;
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

template <typename T>
Tensor<T> to_precision(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    return x.template cast<T>();
  }
}

void log_exclusion(std::ostream* log, const char* split, const std::vector<std::size_t>& excluded) {
  if (!log || excluded.empty()) return;
  *log << "note: " << split << " UA excludes classes without samples:";
  for (auto k : excluded) *log << ' ' << k;
  *log << '\n';
}

}  // namespace

template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& ds, std::size_t batch, std::ostream* log) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (ds.class_count != net.spec().classes || ds.channels() != net.spec().in_channels) {
    throw ShapeError("evaluate: dataset does not match the network spec");
  }
  EvalResult r;
  r.predictions.reserve(ds.size());
  ForwardContext ctx{Mode::kEval, nullptr, false};
  double loss_sum = 0.0;
  for (std::size_t first = 0; first < ds.size(); first += batch) {
    const std::size_t count = std::min(batch, ds.size() - first);
    Graph<T> g(false);
    Var x = g.constant(to_precision<T>(gather_images(ds, first, count)));
    auto out = net.forward(g, x, ctx);
    std::vector<std::size_t> labels(ds.labels.begin() + first, ds.labels.begin() + first + count);
    loss_sum += static_cast<double>(g.value(softmax_xent(g, out.logits, labels)).item()) * count;
    const auto& logits = g.value(out.logits);
    for (std::size_t i = 0; i < count; ++i) r.predictions.push_back(argmax_row(logits, i));
  }
  r.loss = loss_sum / static_cast<double>(ds.size());
  std::vector<std::size_t> excluded;
  r.ua = unweighted_accuracy(r.predictions, ds.labels, ds.class_count, &excluded);
  log_exclusion(log, "evaluation", excluded);
  return r;
}

template <typename T>
RunMetrics train_run(Network<T>& net, const Dataset& train, const Dataset& valid, const TrainConfig& cfg) {
  if (train.class_count != net.spec().classes || valid.class_count != net.spec().classes ||
      train.channels() != net.spec().in_channels || valid.channels() != net.spec().in_channels) {
    throw ShapeError("train_run: dataset does not match the network spec");
  }
  RunMetrics metrics;
  auto record = [&](std::size_t epoch, double lr, double train_loss) {
    const auto tr = evaluate(net, train, cfg.eval_batch, cfg.log);
    const auto va = evaluate(net, valid, cfg.eval_batch, cfg.log);
    EpochMetrics e{epoch, lr, epoch == 0 ? tr.loss : train_loss, tr.ua, va.ua, tr.ua - va.ua};
    metrics.epochs.push_back(e);
    if (cfg.log) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch %zu lr %.5f loss %.4f train_ua %.2f valid_ua %.2f gap %.2f\n",
                    e.epoch, e.lr, e.train_loss, e.train_ua, e.valid_ua, e.gap);
      *cfg.log << line << std::flush;
    }
  };
  record(0, cfg.sgd.lr0, 0.0);
  if (cfg.epochs == 0) return metrics;

  MiniBatcher batcher(train, cfg.batch, cfg.seed ^ 0xB47C4E5ULL, cfg.augment);
  Rng shake_rng(cfg.seed ^ 0x5AA4E00DULL);
  SgdOptimizer<T> opt(cfg.sgd);
  ParamStore<T> params = net.params();
  const std::size_t total = cfg.epochs * batcher.batches_per_epoch();
  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    batcher.start_epoch(epoch);
    const double epoch_lr = cosine_lr(t, total, cfg.sgd.lr0);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    Batch batch;
    while (batcher.next(batch)) {
      const double lr = cosine_lr(t, total, cfg.sgd.lr0);
      ++t;
      if (batch.size() < 2) continue;
      params.zero_grad();
      Graph<T> g;
      ForwardContext ctx{Mode::kTrain, &shake_rng, true};
      Var x = g.constant(to_precision<T>(batch.images));
      auto out = net.forward(g, x, ctx);
      Var loss = softmax_xent(g, out.logits, batch.labels);
      const double l = static_cast<double>(g.value(loss).item());
      if (!std::isfinite(l)) throw std::runtime_error("train_run: non-finite loss at step " + std::to_string(t));
      g.backward(loss);
      opt.step(params, lr);
      loss_sum += l * static_cast<double>(batch.size());
      seen += batch.size();
    }
    record(epoch, epoch_lr, seen ? loss_sum / static_cast<double>(seen) : 0.0);
  }
  return metrics;
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'H', 'K', 'N', 'O', 'R', 'M', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                                                    std::uint8_t>>;
  const auto bits = std::bit_cast<Bits>(v);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                                                    std::uint8_t>>;
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw CheckpointError(path.string() + ": truncated checkpoint");
  }
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(bytes[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto n = get_le<std::uint64_t>(in, path);
  if (n > (1u << 26)) throw CheckpointError(path.string() + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(path.string() + ": truncated string");
  return s;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> checkpoint_table(Network<T>& net, ParamStore<T>& params) {
  std::vector<std::pair<std::string, Tensor<T>*>> table;
  for (auto& [name, p] : params) table.emplace_back(name, &p->value);
  for (auto& [site, stats] : net.running_stats()) {
    table.emplace_back(site + ".running_mean", &stats->mean);
    table.emplace_back(site + ".running_var", &stats->var);
  }
  return table;
}

std::ifstream open_checkpoint(const std::filesystem::path& path, std::string& metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  metadata = get_string(in, path);
  return in;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, metadata);
  auto params = net.params();
  const auto table = checkpoint_table(net, params);
  put_le<std::uint64_t>(out, table.size());
  for (const auto& [name, tensor] : table) {
    put_string(out, name);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(T)));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
    for (auto d : tensor->shape()) put_le<std::uint64_t>(out, d);
    for (std::size_t i = 0; i < tensor->numel(); ++i) put_le<T>(out, (*tensor)[i]);
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

template <typename T>
std::string load_checkpoint(const std::filesystem::path& path, Network<T>& net) {
  std::string metadata;
  auto in = open_checkpoint(path, metadata);
  const auto count = get_le<std::uint64_t>(in, path);
  std::map<std::string, Tensor<double>> stored;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(in, path);
    const auto width = get_le<std::uint8_t>(in, path);
    const auto rank = get_le<std::uint32_t>(in, path);
    if ((width != 4 && width != 8) || rank == 0 || rank > 8) {
      throw CheckpointError(path.string() + ": malformed entry " + name);
    }
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in, path);
    Tensor<double> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t[i] = width == 4 ? static_cast<double>(get_le<float>(in, path)) : get_le<double>(in, path);
    }
    stored.emplace(std::move(name), std::move(t));
  }
  auto params = net.params();
  const auto table = checkpoint_table(net, params);
  if (table.size() != stored.size()) {
    throw CheckpointError(path.string() + ": checkpoint holds " + std::to_string(stored.size()) +
                          " tensors, network expects " + std::to_string(table.size()));
  }
  for (const auto& [name, tensor] : table) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError(path.string() + ": missing tensor " + name);
    if (it->second.shape() != tensor->shape()) {
      throw CheckpointError(path.string() + ": shape mismatch for " + name + ": stored " +
                            shape_to_string(it->second.shape()) + ", network " + shape_to_string(tensor->shape()));
    }
    for (std::size_t i = 0; i < tensor->numel(); ++i) (*tensor)[i] = static_cast<T>(it->second[i]);
  }
  return metadata;
}

std::string read_checkpoint_metadata(const std::filesystem::path& path) {
  std::string metadata;
  open_checkpoint(path, metadata);
  return metadata;
}

double AddingTaskResult::tail_loss(std::size_t window) const {
  if (loss.empty()) throw std::logic_error("tail_loss: empty trace");
  const std::size_t n = std::min(window, loss.size());
  return std::accumulate(loss.end() - static_cast<std::ptrdiff_t>(n), loss.end(), 0.0) / static_cast<double>(n);
}

template <typename T>
AddingTaskResult train_adding_task(const AddingTaskConfig& cfg) {
  Rng rng(cfg.seed);
  BNLSTMOptions opts;
  opts.input = 2;
  opts.hidden = cfg.hidden;
  opts.gamma0 = cfg.gamma0;
  opts.max_steps = cfg.seq_len;
  BNLSTMCell<T> cell(opts, rng);
  Parameter<T> readout(Tensor<T>::randn({1, cfg.hidden}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.hidden))));
  Parameter<T> readout_bias(Tensor<T>::zeros({1}));
  ParamStore<T> params;
  cell.collect("cell", params);
  params.add("readout.weight", readout);
  params.add("readout.bias", readout_bias);
  SgdOptimizer<T> opt({cfg.lr, cfg.momentum, 0.0});

  AddingTaskResult result;
  result.loss.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    auto batch = make_adding_batch<T>(cfg.seq_len, cfg.batch, rng);
    params.zero_grad();
    Graph<T> g;
    auto hs = cell.forward(g, g.constant(batch.sequence));
    Var pred = bias_add(g, linear(g, hs.back(), g.param(readout)), g.param(readout_bias));
    Var diff = sub(g, pred, g.constant(batch.target));
    Var loss = mean(g, mul(g, diff, diff));
    const double l = static_cast<double>(g.value(loss).item());
    if (!std::isfinite(l)) throw std::runtime_error("adding task: non-finite loss at step " + std::to_string(s));
    result.loss.push_back(l);
    g.backward(loss);
    opt.step(params, cfg.lr);
  }
  return result;
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template EvalResult evaluate<float>(Network<float>&, const Dataset&, std::size_t, std::ostream*);
template EvalResult evaluate<double>(Network<double>&, const Dataset&, std::size_t, std::ostream*);
template RunMetrics train_run<float>(Network<float>&, const Dataset&, const Dataset&, const TrainConfig&);
template RunMetrics train_run<double>(Network<double>&, const Dataset&, const Dataset&, const TrainConfig&);
template void save_checkpoint<float>(const std::filesystem::path&, Network<float>&, const std::string&);
template void save_checkpoint<double>(const std::filesystem::path&, Network<double>&, const std::string&);
template std::string load_checkpoint<float>(const std::filesystem::path&, Network<float>&);
template std::string load_checkpoint<double>(const std::filesystem::path&, Network<double>&);
template AddingTaskResult train_adding_task<float>(const AddingTaskConfig&);
template AddingTaskResult train_adding_task<double>(const AddingTaskConfig&);

}  // namespace shakenorm
