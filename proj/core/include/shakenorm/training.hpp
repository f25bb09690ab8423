#ifndef SHAKENORM_TRAINING_HPP_
#define SHAKENORM_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shakenorm/autodiff.hpp"
#include "shakenorm/blocks.hpp"
#include "shakenorm/bnlstm.hpp"
#include "shakenorm/data_io.hpp"

namespace shakenorm {

/// 0.5 * lr0 * (1 + cos(pi * t / total)). Throws std::out_of_range when t > total.
double cosine_lr(std::size_t t, std::size_t total, double lr0);

struct SgdOptions {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Momentum SGD with coupled weight decay: v = m v + g + wd p; p -= lr v.
template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdOptions opts = {}) : opts_(opts) {}

  const SgdOptions& options() const { return opts_; }
  /// Updates every trainable parameter of `params` from its accumulated gradient.
  void step(ParamStore<T>& params, double lr);
  const Tensor<T>* velocity(const std::string& name) const;

 private:
  SgdOptions opts_;
  std::map<std::string, Tensor<T>> velocity_;
};

/// Mean per-class recall in percent. Classes with no samples in `labels` are left out of the
/// mean and reported through `excluded`.
double unweighted_accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                           std::size_t classes, std::vector<std::size_t>* excluded = nullptr);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_ua = 0.0;
  double valid_ua = 0.0;
  double gap = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;  // row 0 is the initialization
  const EpochMetrics& final() const { return epochs.back(); }
};

/// Writes epoch,lr,train_loss,train_ua,valid_ua,gap with fixed 9-digit precision.
void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);
RunMetrics read_metrics_csv(const std::filesystem::path& path);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::size_t eval_batch = 250;
  SgdOptions sgd;
  std::uint64_t seed = 1;
  Augment augment = Augment::kNone;
  std::ostream* log = nullptr;
};

struct EvalResult {
  std::vector<std::size_t> predictions;
  double loss = 0.0;
  double ua = 0.0;
};

/// Eval-mode pass over a whole dataset.
template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& ds, std::size_t batch = 250, std::ostream* log = nullptr);

/// Trains with a per-step cosine schedule and evaluates both splits in eval mode after every epoch.
/// Row 0 carries the eval-mode training loss at initialization; later rows carry the mean
/// mini-batch training loss. Single-sample batches are skipped (batch statistics are undefined).
template <typename T>
RunMetrics train_run(Network<T>& net, const Dataset& train, const Dataset& valid, const TrainConfig& cfg);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary container: "SHKNORM\0", u32 version, metadata string, then a table of named tensors
/// (name, dtype, rank, dims, little-endian values). Parameters are stored under their names,
/// running statistics under "<site>.running_mean" and "<site>.running_var".
template <typename T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net, const std::string& metadata);
/// Restores every tensor of `net`; throws CheckpointError on a missing name or shape mismatch.
/// Returns the stored metadata.
template <typename T>
std::string load_checkpoint(const std::filesystem::path& path, Network<T>& net);
std::string read_checkpoint_metadata(const std::filesystem::path& path);

struct AddingTaskConfig {
  std::size_t seq_len = 20;
  std::size_t hidden = 32;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double gamma0 = 0.1;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
};

struct AddingTaskResult {
  std::vector<double> loss;  // training MSE per step
  /// Mean loss over the last `window` steps.
  double tail_loss(std::size_t window = 100) const;
};

/// BN-LSTM plus a linear read-out of the last hidden state, trained on fresh adding-task batches.
template <typename T>
AddingTaskResult train_adding_task(const AddingTaskConfig& cfg);

}  // namespace shakenorm

#endif  // SHAKENORM_TRAINING_HPP_
