#include "shakenorm/shaking.hpp"

#include <algorithm>
#include <stdexcept>

#include "shakenorm/ops.hpp"

namespace shakenorm {

void ShakeConfig::validate() const {
  if (n_branches == 0) throw std::invalid_argument("shake: branch count must be at least 1");
  if (subbands == 0) throw std::invalid_argument("shake: sub-band count must be at least 1");
  if (!(p_off >= 0.0 && p_off <= 1.0)) throw std::invalid_argument("shake: p_off must lie in [0, 1]");
}

std::string to_string(ShakeForward m) { return m == ShakeForward::kShake ? "shake" : "even"; }

std::string to_string(ShakeBackward m) {
  switch (m) {
    case ShakeBackward::kShake: return "shake";
    case ShakeBackward::kEven: return "even";
    case ShakeBackward::kKeep: return "keep";
  }
  return "?";
}

std::string to_string(Granularity m) { return m == Granularity::kPerBatch ? "batch" : "image"; }

ShakeForward parse_shake_forward(const std::string& s) {
  if (s == "shake") return ShakeForward::kShake;
  if (s == "even") return ShakeForward::kEven;
  throw std::invalid_argument("unknown shake forward mode: " + s);
}

ShakeBackward parse_shake_backward(const std::string& s) {
  if (s == "shake") return ShakeBackward::kShake;
  if (s == "even") return ShakeBackward::kEven;
  if (s == "keep") return ShakeBackward::kKeep;
  throw std::invalid_argument("unknown shake backward mode: " + s);
}

Granularity parse_granularity(const std::string& s) {
  if (s == "batch" || s == "per_batch") return Granularity::kPerBatch;
  if (s == "image" || s == "per_image") return Granularity::kPerImage;
  throw std::invalid_argument("unknown shake granularity: " + s);
}

SimplexSample sample_simplex(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_simplex: n must be positive");
  SimplexSample s;
  if (n == 1) {
    s.coefficients = {1.0};
    return s;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> cuts(n - 1);
  for (auto& c : cuts) c = unif(rng);
  std::sort(cuts.begin(), cuts.end());
  s.coefficients.resize(n);
  double prev = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    s.coefficients[i] = cuts[i] - prev;
    prev = cuts[i];
  }
  s.coefficients[n - 1] = 1.0 - prev;
  return s;
}

bool stochastic_gate(const ShakeConfig& cfg, Rng& rng) {
  if (!(cfg.p_off >= 0.0 && cfg.p_off <= 1.0)) throw std::invalid_argument("shake: p_off must lie in [0, 1]");
  if (cfg.p_off == 0.0) return true;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return unif(rng) >= cfg.p_off;
}

std::size_t subband_axis(const Shape& shape) {
  if (shape.size() == 4) return 2;
  if (shape.size() == 2) return 1;
  throw ShapeError("sub-band shaking expects rank 2 or 4, got " + shape_to_string(shape));
}

template <typename T>
std::vector<Var> subband_split(Graph<T>& g, Var x, std::size_t bands) {
  return split(g, x, subband_axis(g.value(x).shape()), bands);
}

template <typename T>
Var subband_concat(Graph<T>& g, const std::vector<Var>& bands) {
  if (bands.empty()) throw std::invalid_argument("subband_concat of zero bands");
  return concat(g, bands, subband_axis(g.value(bands.front()).shape()));
}

namespace {

// Index geometry: [batch][mid][extent][inner] around the sub-band axis.
struct CellLayout {
  std::size_t batch = 1, mid = 1, extent = 1, inner = 1, band_extent = 1;
};

CellLayout cell_layout(const Shape& shape, std::size_t bands) {
  if (shape.size() < 2) throw ShapeError("shake expects a leading batch axis, got " + shape_to_string(shape));
  CellLayout l;
  l.batch = shape[0];
  if (bands == 1) {
    l.extent = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) l.inner *= shape[i];
    l.band_extent = 1;
    return l;
  }
  const std::size_t axis = subband_axis(shape);
  for (std::size_t i = 1; i < axis; ++i) l.mid *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  if (l.extent % bands != 0) {
    throw ShapeError("shake: sub-band axis extent " + std::to_string(l.extent) + " not divisible by " +
                     std::to_string(bands) + " bands");
  }
  l.band_extent = l.extent / bands;
  return l;
}

// Calls fn(flat_index, band, row) for every element.
template <typename Fn>
void for_each_cell(const CellLayout& l, Granularity gran, Fn&& fn) {
  std::size_t idx = 0;
  for (std::size_t n = 0; n < l.batch; ++n) {
    const std::size_t row = gran == Granularity::kPerImage ? n : 0;
    for (std::size_t m = 0; m < l.mid; ++m) {
      for (std::size_t e = 0; e < l.extent; ++e) {
        const std::size_t band = e / l.band_extent;
        for (std::size_t i = 0; i < l.inner; ++i) fn(idx++, band, row);
      }
    }
  }
}

ShakeRecord even_record(std::size_t n_branches) {
  ShakeRecord r;
  r.has_metadata = true;
  r.granularity = Granularity::kPerBatch;
  r.rows = 1;
  r.bands = 1;
  r.n_branches = n_branches;
  r.alpha.assign(n_branches, 1.0 / static_cast<double>(n_branches));
  return r;
}

bool is_even(const ShakeRecord& r) {
  const double e = 1.0 / static_cast<double>(r.n_branches);
  return std::all_of(r.alpha.begin(), r.alpha.end(), [e](double a) { return a == e; });
}

template <typename T>
Tensor<T> even_mean(const std::vector<const Tensor<T>*>& branches) {
  Tensor<T> out = *branches.front();
  auto o = out.data();
  for (std::size_t b = 1; b < branches.size(); ++b) {
    auto src = branches[b]->data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += src[i];
  }
  const T n = static_cast<T>(branches.size());
  for (auto& v : o) v /= n;
  return out;
}

}  // namespace

template <typename T>
Tensor<T> shake_combine(const std::vector<const Tensor<T>*>& branches, const ShakeRecord& coeffs) {
  if (branches.empty()) throw std::invalid_argument("shake needs at least one branch");
  for (const auto* b : branches) require_same_shape(branches.front()->shape(), b->shape(), "shake branches");
  if (!coeffs.has_metadata) throw std::invalid_argument("shake: granularity metadata missing");
  if (coeffs.n_branches != branches.size()) {
    throw std::invalid_argument("shake: record has " + std::to_string(coeffs.n_branches) + " coefficients for " +
                                std::to_string(branches.size()) + " branches");
  }
  if (coeffs.gated_off || is_even(coeffs)) return even_mean(branches);
  const auto layout = cell_layout(branches.front()->shape(), coeffs.bands);
  if (coeffs.granularity == Granularity::kPerImage && coeffs.rows != layout.batch) {
    throw ShapeError("shake: record rows " + std::to_string(coeffs.rows) + " vs batch " +
                     std::to_string(layout.batch));
  }
  Tensor<T> out(branches.front()->shape());
  const std::size_t nb = branches.size();
  for_each_cell(layout, coeffs.granularity, [&](std::size_t i, std::size_t band, std::size_t row) {
    T s = T(0);
    for (std::size_t b = 0; b < nb; ++b) s += static_cast<T>(coeffs.coefficient(band, row, b)) * (*branches[b])[i];
    out[i] = s;
  });
  return out;
}

template <typename T>
std::vector<Tensor<T>> shake_backward(const Tensor<T>& upstream, const ShakeRecord& record, const ShakeConfig& cfg,
                                      Rng& rng) {
  if (!record.has_metadata) throw std::invalid_argument("shake backward: granularity metadata missing");
  const std::size_t nb = record.n_branches;
  std::vector<Tensor<T>> grads;
  grads.reserve(nb);
  const bool even = record.gated_off || cfg.backward == ShakeBackward::kEven;
  if (even) {
    Tensor<T> g = upstream;
    const T n = static_cast<T>(nb);
    for (auto& v : g.data()) v /= n;
    for (std::size_t b = 0; b < nb; ++b) grads.push_back(g);
    return grads;
  }
  ShakeRecord beta = record;
  if (cfg.backward == ShakeBackward::kShake) {
    beta.alpha.clear();
    beta.alpha.reserve(record.bands * record.rows * nb);
    for (std::size_t band = 0; band < record.bands; ++band) {
      for (std::size_t row = 0; row < record.rows; ++row) {
        auto s = sample_simplex(nb, rng);
        beta.alpha.insert(beta.alpha.end(), s.coefficients.begin(), s.coefficients.end());
      }
    }
  }
  const auto layout = cell_layout(upstream.shape(), record.bands);
  for (std::size_t b = 0; b < nb; ++b) grads.emplace_back(upstream.shape());
  for_each_cell(layout, beta.granularity, [&](std::size_t i, std::size_t band, std::size_t row) {
    for (std::size_t b = 0; b < nb; ++b) grads[b][i] = static_cast<T>(beta.coefficient(band, row, b)) * upstream[i];
  });
  return grads;
}

template <typename T>
Var shake_forward(Graph<T>& g, const std::vector<Var>& branches, const ShakeConfig& cfg, Mode mode, Rng& rng,
                  ShakeRecord* record_out) {
  cfg.validate();
  if (branches.size() != cfg.n_branches) {
    throw std::invalid_argument("shake: config expects " + std::to_string(cfg.n_branches) + " branches, got " +
                                std::to_string(branches.size()));
  }
  std::vector<const Tensor<T>*> values;
  for (auto b : branches) values.push_back(&g.value(b));
  for (const auto* v : values) require_same_shape(values.front()->shape(), v->shape(), "shake branches");
  const std::size_t nb = branches.size();
  const std::size_t batch = values.front()->rank() > 0 ? values.front()->dim(0) : 1;

  ShakeRecord rec;
  ShakeConfig effective = cfg;
  if (mode == Mode::kEval) {
    rec = even_record(nb);
    effective.backward = ShakeBackward::kEven;
  } else {
    cell_layout(values.front()->shape(), cfg.subbands);  // validates band divisibility
    rec.has_metadata = true;
    rec.granularity = cfg.granularity;
    rec.rows = cfg.granularity == Granularity::kPerImage ? batch : 1;
    rec.bands = cfg.subbands;
    rec.n_branches = nb;
    rec.gated_off = !stochastic_gate(cfg, rng);
    if (rec.gated_off || cfg.forward == ShakeForward::kEven) {
      rec.alpha.assign(rec.bands * rec.rows * nb, 1.0 / static_cast<double>(nb));
    } else {
      rec.alpha.reserve(rec.bands * rec.rows * nb);
      for (std::size_t band = 0; band < rec.bands; ++band) {
        for (std::size_t row = 0; row < rec.rows; ++row) {
          auto s = sample_simplex(nb, rng);
          rec.alpha.insert(rec.alpha.end(), s.coefficients.begin(), s.coefficients.end());
        }
      }
    }
    if (!rec.gated_off && cfg.backward == ShakeBackward::kShake) rec.backward_seed = rng();
  }
  Tensor<T> out = shake_combine(values, rec);
  if (record_out) *record_out = rec;
  return g.record(std::move(out), branches,
                  [branches, rec, effective](Graph<T>& gr, const Tensor<T>& go) {
                    Rng brng(rec.backward_seed);
                    auto grads = shake_backward(go, rec, effective, brng);
                    for (std::size_t b = 0; b < branches.size(); ++b) gr.accumulate(branches[b], grads[b]);
                  },
                  "shake");
}

#define SHAKENORM_INSTANTIATE_SHAKE(T)                                                                     \
  template std::vector<Var> subband_split<T>(Graph<T>&, Var, std::size_t);                                  \
  template Var subband_concat<T>(Graph<T>&, const std::vector<Var>&);                                       \
  template Var shake_forward<T>(Graph<T>&, const std::vector<Var>&, const ShakeConfig&, Mode, Rng&,          \
                                ShakeRecord*);                                                              \
  template Tensor<T> shake_combine<T>(const std::vector<const Tensor<T>*>&, const ShakeRecord&);            \
  template std::vector<Tensor<T>> shake_backward<T>(const Tensor<T>&, const ShakeRecord&, const ShakeConfig&, \
                                                    Rng&);

SHAKENORM_INSTANTIATE_SHAKE(float)
SHAKENORM_INSTANTIATE_SHAKE(double)

}  // namespace shakenorm
