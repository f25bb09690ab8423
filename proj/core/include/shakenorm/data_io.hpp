#ifndef SHAKENORM_DATA_IO_HPP_
#define SHAKENORM_DATA_IO_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shakenorm/tensor.hpp"

namespace shakenorm {

class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};
class TruncatedFileError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};
class CountMismatchError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};
class LabelRangeError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};
class RecordSizeError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};

/// Labeled images, stored as contiguous [n x c x h x w] floats.
struct Dataset {
  Shape sample_shape;  // {c, h, w}
  std::vector<float> pixels;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_numel(sample_shape); }
  std::size_t channels() const { return sample_shape.at(0); }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * sample_size(), sample_size());
  }
  /// Samples [first, first + count) as a new dataset.
  Dataset slice(std::size_t first, std::size_t count) const;
  /// Up to `per_class` samples of each class, in original order.
  Dataset take_per_class(std::size_t per_class) const;
  void validate() const;
};

/// Big-endian IDX: images magic 2051 (count, rows, cols), labels magic 2049 (count).
/// Pixels are scaled to [0, 1]; ten classes.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: 3073-byte records (label, 3x32x32 channel-major bytes).
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

/// Writers for the IDX layout (used by fixtures and the data preparation tool).
void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel mean and population standard deviation over a split.
ChannelStats fit_standardization(const Dataset& ds);
void apply_standardization(Dataset& ds, const ChannelStats& stats);

/// K Gaussian clusters, `per_class` samples each, around centers drawn from N(0, 4 I).
Dataset make_blobs(std::size_t classes, std::size_t per_class, const Shape& sample_shape, double spread,
                   std::uint64_t seed);

enum class Augment { kNone, kCropFlip };

struct Batch {
  Tensor<float> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;
  std::size_t size() const { return labels.size(); }
};

/// Seeded per-epoch shuffle; the final batch of an epoch may be short so every sample appears once.
class MiniBatcher {
 public:
  MiniBatcher(const Dataset& ds, std::size_t batch, std::uint64_t seed, Augment augment = Augment::kNone);

  void start_epoch(std::size_t epoch);
  bool next(Batch& out);
  std::size_t batches_per_epoch() const { return (ds_.size() + batch_ - 1) / batch_; }

 private:
  const Dataset& ds_;
  std::size_t batch_;
  std::uint64_t seed_;
  Augment augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

/// Whole dataset (or the given indices) as one tensor, for evaluation.
Tensor<float> gather_images(const Dataset& ds, std::size_t first, std::size_t count);

}  // namespace shakenorm

#endif  // SHAKENORM_DATA_IO_HPP_
