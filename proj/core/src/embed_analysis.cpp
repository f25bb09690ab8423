#include "shakenorm/embed_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

namespace shakenorm {

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

const char* mode_name(Mode m) { return m == Mode::kTrain ? "train" : "eval"; }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_writable(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void EmbeddingSet::validate() const {
  if (values.size() != labels.size() * dim) {
    throw ShapeError("embedding set: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(values.size()) + " values of dimension " + std::to_string(dim));
  }
}

template <typename T>
EmbeddingSet extract_embeddings(Network<T>& net, const Dataset& ds, Mode mode, std::uint64_t seed,
                                std::size_t batch) {
  if (!net.has_embedding_tap()) throw std::invalid_argument("extract_embeddings: network has no embedding tap");
  if (ds.size() == 0) throw std::invalid_argument("extract_embeddings: empty dataset");
  Rng rng(seed);
  ForwardContext ctx{mode, &rng, false};
  EmbeddingSet es;
  es.dim = net.feature_dim();
  es.mode = mode;
  es.labels = ds.labels;
  es.values.reserve(ds.size() * es.dim);
  for (std::size_t first = 0; first < ds.size(); first += batch) {
    std::size_t count = std::min(batch, ds.size() - first);
    // Train-mode batch statistics need two samples; fold a lone remainder into the previous batch.
    if (mode == Mode::kTrain && ds.size() - first - count == 1) ++count;
    Graph<T> g(false);
    auto images = gather_images(ds, first, count);
    Var x;
    if constexpr (std::is_same_v<T, float>) {
      x = g.constant(std::move(images));
    } else {
      x = g.constant(images.template cast<T>());
    }
    const auto& f = g.value(net.forward(g, x, ctx).features);
    for (std::size_t i = 0; i < f.numel(); ++i) es.values.push_back(static_cast<double>(f[i]));
    if (count > std::min(batch, ds.size() - first)) break;
  }
  return es;
}

std::vector<std::vector<double>> class_centers(const EmbeddingSet& es, std::size_t classes) {
  es.validate();
  std::vector<std::vector<double>> centers(classes, std::vector<double>(es.dim, 0.0));
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < es.size(); ++i) {
    const auto k = es.labels[i];
    if (k >= classes) throw std::out_of_range("class_centers: label " + std::to_string(k) + " out of range");
    ++count[k];
    auto r = es.row(i);
    for (std::size_t d = 0; d < es.dim; ++d) centers[k][d] += r[d];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (count[k] == 0) throw std::invalid_argument("class_centers: class " + std::to_string(k) + " has no samples");
    for (auto& v : centers[k]) v /= static_cast<double>(count[k]);
  }
  return centers;
}

RelativeDistanceCurve relative_distance_curve(const EmbeddingSet& train_mode, const EmbeddingSet& eval_mode,
                                              const std::vector<double>& grid, std::size_t classes) {
  train_mode.validate();
  eval_mode.validate();
  if (train_mode.size() != eval_mode.size() || train_mode.dim != eval_mode.dim) {
    throw ShapeError("relative_distance_curve: train/eval sets differ in size or dimension");
  }
  if (train_mode.labels != eval_mode.labels) {
    throw std::invalid_argument("relative_distance_curve: train/eval labels differ");
  }
  const auto centers = class_centers(eval_mode, classes);
  RelativeDistanceCurve c;
  c.grid = grid;
  c.train_radius.assign(classes, 0.0);
  c.eval_radius.assign(classes, 0.0);
  std::vector<double> eval_dist(eval_mode.size());
  for (std::size_t i = 0; i < eval_mode.size(); ++i) {
    const auto k = eval_mode.labels[i];
    eval_dist[i] = distance(eval_mode.row(i), centers[k]);
    c.eval_radius[k] = std::max(c.eval_radius[k], eval_dist[i]);
    c.train_radius[k] = std::max(c.train_radius[k], distance(train_mode.row(i), centers[k]));
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (c.train_radius[k] == 0.0 && c.eval_radius[k] > 0.0) {
      throw DegenerateRadiusError("relative_distance_curve: class " + std::to_string(k) +
                                  " has zero train-mode radius but nonzero eval-mode distances");
    }
  }
  std::vector<std::size_t> count(classes, 0);
  for (auto l : eval_mode.labels) ++count[l];
  c.per_class.assign(classes, std::vector<double>(grid.size(), 0.0));
  c.pooled.assign(grid.size(), 0.0);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    std::vector<std::size_t> within(classes, 0);
    for (std::size_t i = 0; i < eval_mode.size(); ++i) {
      const auto k = eval_mode.labels[i];
      if (eval_dist[i] <= grid[j] * c.train_radius[k]) ++within[k];
    }
    std::size_t total = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      c.per_class[k][j] = static_cast<double>(within[k]) / static_cast<double>(count[k]);
      total += within[k];
    }
    c.pooled[j] = static_cast<double>(total) / static_cast<double>(eval_mode.size());
  }
  return c;
}

DispersionStats dispersion_stats(const EmbeddingSet& es, std::size_t classes) {
  if (es.dim < 2) throw std::invalid_argument("dispersion_stats: embedding dimension must be at least 2");
  if (classes < 2) throw std::invalid_argument("dispersion_stats: at least two classes required");
  DispersionStats st;
  st.centers = class_centers(es, classes);
  std::vector<double> norms(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    norms[k] = std::sqrt(std::inner_product(st.centers[k].begin(), st.centers[k].end(), st.centers[k].begin(), 0.0));
    if (norms[k] == 0.0) throw std::domain_error("dispersion_stats: class " + std::to_string(k) + " center is zero");
  }
  st.angles.assign(classes, std::vector<double>(classes, 0.0));
  for (std::size_t a = 0; a < classes; ++a) {
    for (std::size_t b = a + 1; b < classes; ++b) {
      // 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0 and pi, where acos does not.
      double diff = 0.0, sum = 0.0;
      for (std::size_t d = 0; d < es.dim; ++d) {
        const double u = st.centers[a][d] / norms[a], v = st.centers[b][d] / norms[b];
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
      }
      st.angles[a][b] = st.angles[b][a] = 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
    }
  }
  st.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < es.size(); ++i) {
    for (std::size_t j = i + 1; j < es.size(); ++j) {
      if (es.labels[i] == es.labels[j]) continue;
      const double d = distance(es.row(i), es.row(j));
      if (d < st.min_margin) {
        st.min_margin = d;
        st.margin_pair[0] = std::min(es.labels[i], es.labels[j]);
        st.margin_pair[1] = std::max(es.labels[i], es.labels[j]);
      }
    }
  }
  return st;
}

double student_t_upper_tail(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_upper_tail: df must be positive");
  boost::math::students_t dist(df);
  return boost::math::cdf(boost::math::complement(dist, t));
}

TTestResult paired_t_test_one_sided(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired t-test: at least two pairs required");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) throw DegenerateTestError("paired t-test: differences have zero variance");
  TTestResult r;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.df = n - 1;
  r.p = student_t_upper_tail(r.t, static_cast<double>(r.df));
  return r;
}

namespace {

nlohmann::json to_json(const DispersionReport& r) {
  nlohmann::json j;
  j["curve"] = {{"grid", r.curve.grid},
                {"per_class", r.curve.per_class},
                {"pooled", r.curve.pooled},
                {"train_radius", r.curve.train_radius},
                {"eval_radius", r.curve.eval_radius}};
  j["dispersion"] = {{"centers", r.stats.centers},
                     {"angles", r.stats.angles},
                     {"min_margin", r.stats.min_margin},
                     {"margin_pair", {r.stats.margin_pair[0], r.stats.margin_pair[1]}}};
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require_writable(out, path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace

void export_report(const DispersionReport& report, const std::filesystem::path& path, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    write_text(path, to_json(report).dump(2) + "\n");
    return;
  }
  std::ostringstream out;
  out << "r,pooled";
  for (std::size_t k = 0; k < report.curve.per_class.size(); ++k) out << ",class" << k;
  out << '\n';
  for (std::size_t j = 0; j < report.curve.grid.size(); ++j) {
    out << format_double(report.curve.grid[j]) << ',' << format_double(report.curve.pooled[j]);
    for (const auto& row : report.curve.per_class) out << ',' << format_double(row[j]);
    out << '\n';
  }
  write_text(path, out.str());
}

void export_report(const RunMetrics& metrics, const std::filesystem::path& path, ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    write_metrics_csv(path, metrics);
    return;
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : metrics.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"train_loss", e.train_loss},
                    {"train_ua", e.train_ua},
                    {"valid_ua", e.valid_ua},
                    {"gap", e.gap}});
  }
  write_text(path, nlohmann::json{{"epochs", rows}}.dump(2) + "\n");
}

DispersionReport import_dispersion_report(const std::filesystem::path& path) {
  const auto j = read_json(path);
  DispersionReport r;
  try {
    const auto& c = j.at("curve");
    c.at("grid").get_to(r.curve.grid);
    c.at("per_class").get_to(r.curve.per_class);
    c.at("pooled").get_to(r.curve.pooled);
    c.at("train_radius").get_to(r.curve.train_radius);
    c.at("eval_radius").get_to(r.curve.eval_radius);
    const auto& d = j.at("dispersion");
    d.at("centers").get_to(r.stats.centers);
    d.at("angles").get_to(r.stats.angles);
    d.at("min_margin").get_to(r.stats.min_margin);
    r.stats.margin_pair[0] = d.at("margin_pair").at(0).get<std::size_t>();
    r.stats.margin_pair[1] = d.at("margin_pair").at(1).get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed report: " + e.what());
  }
  return r;
}

RunMetrics import_run_metrics_json(const std::filesystem::path& path) {
  const auto j = read_json(path);
  RunMetrics m;
  try {
    for (const auto& row : j.at("epochs")) {
      EpochMetrics e;
      row.at("epoch").get_to(e.epoch);
      row.at("lr").get_to(e.lr);
      row.at("train_loss").get_to(e.train_loss);
      row.at("train_ua").get_to(e.train_ua);
      row.at("valid_ua").get_to(e.valid_ua);
      row.at("gap").get_to(e.gap);
      m.epochs.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed metrics: " + e.what());
  }
  return m;
}

void write_embeddings_csv(const EmbeddingSet& es, const std::filesystem::path& path) {
  es.validate();
  std::ostringstream out;
  out << "label";
  for (std::size_t d = 1; d <= es.dim; ++d) out << ",x" << d;
  out << ",mode\n";
  for (std::size_t i = 0; i < es.size(); ++i) {
    out << es.labels[i];
    for (double v : es.row(i)) out << ',' << format_double(v);
    out << ',' << mode_name(es.mode) << '\n';
  }
  write_text(path, out.str());
}

EmbeddingSet read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty embedding file");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 3 || line.rfind("label,", 0) != 0 || line.substr(line.size() - 5) != ",mode") {
    throw std::runtime_error(path.string() + ": expected header label,x1..xd,mode");
  }
  EmbeddingSet es;
  es.dim = columns - 2;
  bool mode_seen = false;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " columns, expected " + std::to_string(columns));
    }
    try {
      es.labels.push_back(std::stoul(cells[0]));
      for (std::size_t d = 0; d < es.dim; ++d) es.values.push_back(std::stod(cells[1 + d]));
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " is not numeric");
    }
    const Mode m = cells.back() == "train" ? Mode::kTrain : Mode::kEval;
    if (cells.back() != "train" && cells.back() != "eval") {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has unknown mode " + cells.back());
    }
    if (mode_seen && m != es.mode) throw std::runtime_error(path.string() + ": mixed extraction modes");
    es.mode = m;
    mode_seen = true;
  }
  return es;
}

template EmbeddingSet extract_embeddings<float>(Network<float>&, const Dataset&, Mode, std::uint64_t, std::size_t);
template EmbeddingSet extract_embeddings<double>(Network<double>&, const Dataset&, Mode, std::uint64_t,
                                                 std::size_t);

}  // namespace shakenorm
