#ifndef SHAKENORM_EMBED_ANALYSIS_HPP_
#define SHAKENORM_EMBED_ANALYSIS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "shakenorm/blocks.hpp"
#include "shakenorm/data_io.hpp"
#include "shakenorm/training.hpp"

namespace shakenorm {

class DegenerateRadiusError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};
class DegenerateTestError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Row-major [n x dim] embedding vectors with their labels and the extraction mode.
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::size_t> labels;
  Mode mode = Mode::kEval;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }
  void validate() const;
};

/// Features at the network's embedding tap. Train mode samples shaking (from `seed`) and normalizes
/// with batch statistics but leaves running statistics and parameters untouched.
template <typename T>
EmbeddingSet extract_embeddings(Network<T>& net, const Dataset& ds, Mode mode, std::uint64_t seed = 0,
                                std::size_t batch = 250);

/// Per-class means, [classes][dim]. Throws std::invalid_argument for a class without samples.
std::vector<std::vector<double>> class_centers(const EmbeddingSet& es, std::size_t classes);

struct RelativeDistanceCurve {
  std::vector<double> grid;
  std::vector<std::vector<double>> per_class;  // [classes][grid]
  std::vector<double> pooled;                   // over all samples
  std::vector<double> train_radius;             // R_k: max train-mode distance to the eval-mode center
  std::vector<double> eval_radius;              // max eval-mode distance to the same center
};

/// For class k the center comes from the eval-mode set; curve(r) is the fraction of eval-mode
/// class-k samples within r * R_k. R_k == 0 yields curve 1 when every eval distance is 0 as well.
RelativeDistanceCurve relative_distance_curve(const EmbeddingSet& train_mode, const EmbeddingSet& eval_mode,
                                              const std::vector<double>& grid, std::size_t classes);

struct DispersionStats {
  std::vector<std::vector<double>> centers;
  std::vector<std::vector<double>> angles;  // radians between centers, [classes][classes]
  double min_margin = 0.0;                  // smallest distance between samples of different classes
  std::size_t margin_pair[2] = {0, 0};      // classes attaining min_margin
};

DispersionStats dispersion_stats(const EmbeddingSet& es, std::size_t classes);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 0.0;
};

/// Upper tail P(T > t) of Student's t with `df` degrees of freedom.
double student_t_upper_tail(double t, double df);

/// One-sided paired test of mean(a - b) > 0.
TTestResult paired_t_test_one_sided(const std::vector<double>& a, const std::vector<double>& b);

struct DispersionReport {
  RelativeDistanceCurve curve;
  DispersionStats stats;
};

enum class ReportFormat { kCsv, kJson };

/// CSV: the relative-distance curve (r, pooled, class0..). JSON: the full report.
void export_report(const DispersionReport& report, const std::filesystem::path& path, ReportFormat format);
/// CSV: the metrics trace. JSON: {"epochs": [...]}.
void export_report(const RunMetrics& metrics, const std::filesystem::path& path, ReportFormat format);
DispersionReport import_dispersion_report(const std::filesystem::path& path);
RunMetrics import_run_metrics_json(const std::filesystem::path& path);

/// Columns label,x1..xd,mode.
void write_embeddings_csv(const EmbeddingSet& es, const std::filesystem::path& path);
EmbeddingSet read_embeddings_csv(const std::filesystem::path& path);

}  // namespace shakenorm

#endif  // SHAKENORM_EMBED_ANALYSIS_HPP_
