#include "shakenorm/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace shakenorm {

namespace {

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarSide = 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset) {
  return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
         (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char((v >> 16) & 0xff), char((v >> 8) & 0xff), char(v & 0xff)};
  out.write(bytes, 4);
}

void require_bytes(const std::filesystem::path& path, std::size_t expected, std::size_t actual) {
  if (actual < expected) {
    throw TruncatedFileError(path.string() + ": truncated, expected " + std::to_string(expected) +
                             " bytes, found " + std::to_string(actual));
  }
}

}  // namespace

void Dataset::validate() const {
  if (pixels.size() != labels.size() * sample_size()) {
    throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(pixels.size()) +
                     " pixels of sample shape " + shape_to_string(sample_shape));
  }
  for (auto l : labels) {
    if (l >= class_count) throw LabelRangeError("dataset label " + std::to_string(l) + " >= class count");
  }
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw std::out_of_range("dataset slice beyond end");
  Dataset out;
  out.sample_shape = sample_shape;
  out.class_count = class_count;
  out.labels.assign(labels.begin() + first, labels.begin() + first + count);
  const auto s = sample_size();
  out.pixels.assign(pixels.begin() + first * s, pixels.begin() + (first + count) * s);
  return out;
}

Dataset Dataset::take_per_class(std::size_t per_class) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.class_count = class_count;
  std::vector<std::size_t> taken(class_count, 0);
  const auto s = sample_size();
  for (std::size_t i = 0; i < size(); ++i) {
    if (taken[labels[i]] >= per_class) continue;
    ++taken[labels[i]];
    out.labels.push_back(labels[i]);
    out.pixels.insert(out.pixels.end(), pixels.begin() + i * s, pixels.begin() + (i + 1) * s);
  }
  return out;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  require_bytes(images_path, 16, img.size());
  require_bytes(labels_path, 8, lab.size());
  const auto img_magic = read_be32(img, 0);
  if (img_magic != kIdxImageMagic) {
    throw BadMagicError(images_path.string() + ": bad image magic " + std::to_string(img_magic) + ", expected 2051");
  }
  const auto lab_magic = read_be32(lab, 0);
  if (lab_magic != kIdxLabelMagic) {
    throw BadMagicError(labels_path.string() + ": bad label magic " + std::to_string(lab_magic) + ", expected 2049");
  }
  const std::size_t n = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw CountMismatchError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                             " labels");
  }
  if (rows == 0 || cols == 0) throw DataFormatError(images_path.string() + ": zero image extent");
  require_bytes(images_path, 16 + n * rows * cols, img.size());
  require_bytes(labels_path, 8 + n, lab.size());

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.class_count = 10;
  ds.pixels.resize(n * rows * cols);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) ds.pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= ds.class_count) {
      throw LabelRangeError(labels_path.string() + ": label " + std::to_string(ds.labels[i]) + " at record " +
                            std::to_string(i) + " outside [0, 10)");
    }
  }
  return ds;
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  Dataset ds;
  ds.sample_shape = {3, kCifarSide, kCifarSide};
  ds.class_count = 10;
  const std::size_t image_bytes = 3 * kCifarSide * kCifarSide;
  for (const auto& path : paths) {
    const auto buf = read_file(path);
    if (buf.size() % kCifarRecord != 0) {
      throw RecordSizeError(path.string() + ": size " + std::to_string(buf.size()) +
                            " is not a multiple of the 3073-byte record");
    }
    const std::size_t records = buf.size() / kCifarRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = buf.data() + r * kCifarRecord;
      if (rec[0] >= ds.class_count) {
        throw LabelRangeError(path.string() + ": label " + std::to_string(rec[0]) + " at record " +
                              std::to_string(r) + " outside [0, 10)");
      }
      ds.labels.push_back(rec[0]);
      for (std::size_t i = 0; i < image_bytes; ++i) ds.pixels.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
    }
  }
  return ds;
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (rows == 0 || cols == 0 || pixels.size() % (rows * cols) != 0) {
    throw std::invalid_argument("write_idx_images: pixel count is not a multiple of rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

ChannelStats fit_standardization(const Dataset& ds) {
  const std::size_t c = ds.channels();
  const std::size_t plane = ds.sample_size() / c;
  ChannelStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  if (ds.size() == 0) {
    std::fill(st.stddev.begin(), st.stddev.end(), 1.0);
    return st;
  }
  const double count = static_cast<double>(ds.size() * plane);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = ds.pixels.data() + i * ds.sample_size() + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) st.mean[ch] += p[k];
    }
  }
  for (auto& m : st.mean) m /= count;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = ds.pixels.data() + i * ds.sample_size() + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] - st.mean[ch];
        st.stddev[ch] += d * d;
      }
    }
  }
  for (auto& s : st.stddev) {
    s = std::sqrt(s / count);
    if (!(s > 0.0)) s = 1.0;
  }
  return st;
}

void apply_standardization(Dataset& ds, const ChannelStats& stats) {
  const std::size_t c = ds.channels();
  if (stats.mean.size() != c) throw ShapeError("standardization channel count mismatch");
  const std::size_t plane = ds.sample_size() / c;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = ds.pixels.data() + i * ds.sample_size() + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        p[k] = static_cast<float>((p[k] - stats.mean[ch]) / stats.stddev[ch]);
      }
    }
  }
}

Dataset make_blobs(std::size_t classes, std::size_t per_class, const Shape& sample_shape, double spread,
                   std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("make_blobs needs at least two classes");
  Shape shape = sample_shape;
  if (shape.size() == 1) shape = {shape[0], 1, 1};
  if (shape.size() != 3) throw ShapeError("make_blobs sample shape must be {d} or {c, h, w}");
  Rng rng(seed);
  std::normal_distribution<double> center_dist(0.0, 2.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t dim = shape_numel(shape);
  std::vector<double> centers(classes * dim);
  for (auto& c : centers) c = center_dist(rng);
  Dataset ds;
  ds.sample_shape = shape;
  ds.class_count = classes;
  ds.pixels.reserve(classes * per_class * dim);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      ds.labels.push_back(k);
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = centers[k * dim + d] + (spread > 0.0 ? spread * noise(rng) : 0.0);
        ds.pixels.push_back(static_cast<float>(v));
      }
    }
  }
  return ds;
}

MiniBatcher::MiniBatcher(const Dataset& ds, std::size_t batch, std::uint64_t seed, Augment augment)
    : ds_(ds), batch_(batch), seed_(seed), augment_(augment) {
  if (batch == 0) throw std::invalid_argument("batch size must be at least 1");
  if (batch > ds.size()) {
    throw std::invalid_argument("batch size " + std::to_string(batch) + " exceeds dataset size " +
                                std::to_string(ds.size()));
  }
  start_epoch(0);
}

void MiniBatcher::start_epoch(std::size_t epoch) {
  rng_.seed(seed_ ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  order_.resize(ds_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

bool MiniBatcher::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min(batch_, order_.size() - cursor_);
  const auto& s = ds_.sample_shape;
  const std::size_t c = s[0], h = s[1], w = s[2];
  const std::size_t size = ds_.sample_size();
  out.images = Tensor<float>({count, c, h, w});
  out.labels.resize(count);
  out.indices.assign(order_.begin() + cursor_, order_.begin() + cursor_ + count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t idx = out.indices[b];
    out.labels[b] = ds_.labels[idx];
    auto src = ds_.sample(idx);
    float* dst = out.images.raw() + b * size;
    if (augment_ == Augment::kNone) {
      std::copy(src.begin(), src.end(), dst);
      continue;
    }
    // Zero-pad by 4, crop back to h x w at a random offset, flip horizontally with p = 1/2.
    std::uniform_int_distribution<int> shift(-4, 4);
    const int dy = shift(rng_), dx = shift(rng_);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng_) == 1;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(flip ? w - 1 - x : x) + dx;
          float v = 0.0f;
          if (sy >= 0 && sy < static_cast<long>(h) && sx0 >= 0 && sx0 < static_cast<long>(w)) {
            v = src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx0)];
          }
          dst[(ch * h + y) * w + x] = v;
        }
      }
    }
  }
  cursor_ += count;
  return true;
}

Tensor<float> gather_images(const Dataset& ds, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > ds.size()) throw std::out_of_range("gather_images range");
  const auto& s = ds.sample_shape;
  const std::size_t size = ds.sample_size();
  std::vector<float> data(ds.pixels.begin() + first * size, ds.pixels.begin() + (first + count) * size);
  return Tensor<float>({count, s[0], s[1], s[2]}, std::move(data));
}

}  // namespace shakenorm
