#include "shakenorm/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace shakenorm {

namespace {

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

const char* elementwise_name(Elementwise op) {
  switch (op) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kSub: return "sub";
    case Elementwise::kMul: return "mul";
    case Elementwise::kScale: return "scale";
    case Elementwise::kRelu: return "relu";
    case Elementwise::kSigmoid: return "sigmoid";
    case Elementwise::kTanh: return "tanh";
  }
  return "?";
}

bool is_binary(Elementwise op) {
  return op == Elementwise::kAdd || op == Elementwise::kSub || op == Elementwise::kMul;
}

}  // namespace

template <typename T>
Var elementwise(Graph<T>& g, Elementwise op, Var a, Var b, T scale) {
  const auto& av = g.value(a);
  const char* name = elementwise_name(op);
  if (is_binary(op)) {
    if (!b.valid()) throw std::invalid_argument(std::string(name) + " requires two operands");
    require_same_shape(av.shape(), g.value(b).shape(), name);
  }
  Tensor<T> out(av.shape());
  auto o = out.data();
  auto x = av.data();
  switch (op) {
    case Elementwise::kAdd: {
      auto y = g.value(b).data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    }
    case Elementwise::kSub: {
      auto y = g.value(b).data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      break;
    }
    case Elementwise::kMul: {
      auto y = g.value(b).data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
    }
    case Elementwise::kScale:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * scale;
      break;
    case Elementwise::kRelu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Elementwise::kSigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_value(x[i]);
      break;
    case Elementwise::kTanh:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
      break;
  }

  std::vector<Var> inputs{a};
  if (is_binary(op)) inputs.push_back(b);
  // The output node id is the next one; backward rules that need the output read it back.
  const Var self{g.size()};
  auto backward = [op, a, b, scale, self](Graph<T>& gr, const Tensor<T>& go) {
    auto gd = go.data();
    switch (op) {
      case Elementwise::kAdd:
        gr.accumulate(a, go);
        gr.accumulate(b, go);
        return;
      case Elementwise::kSub: {
        gr.accumulate(a, go);
        if (gr.requires_grad(b)) {
          auto& gb = gr.grad_buffer(b);
          auto d = gb.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gd[i];
        }
        return;
      }
      case Elementwise::kMul: {
        if (gr.requires_grad(a)) {
          auto y = gr.value(b).data();
          auto d = gr.grad_buffer(a).data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * y[i];
        }
        if (gr.requires_grad(b)) {
          auto x = gr.value(a).data();
          auto d = gr.grad_buffer(b).data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * x[i];
        }
        return;
      }
      case Elementwise::kScale: {
        auto d = gr.grad_buffer(a).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * scale;
        return;
      }
      case Elementwise::kRelu: {
        auto x = gr.value(a).data();
        auto d = gr.grad_buffer(a).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > T(0) ? gd[i] : T(0);
        return;
      }
      case Elementwise::kSigmoid: {
        auto y = gr.value(self).data();
        auto d = gr.grad_buffer(a).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * y[i] * (T(1) - y[i]);
        return;
      }
      case Elementwise::kTanh: {
        auto y = gr.value(self).data();
        auto d = gr.grad_buffer(a).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i] * (T(1) - y[i] * y[i]);
        return;
      }
    }
  };
  return g.record(std::move(out), inputs, backward, name);
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  T s = T(0);
  for (auto v : g.value(a).data()) s += v;
  return g.record(Tensor<T>::scalar(s), {a},
                  [a](Graph<T>& gr, const Tensor<T>& go) {
                    const T v = go[0];
                    auto d = gr.grad_buffer(a).data();
                    for (auto& x : d) x += v;
                  },
                  "sum");
}

template <typename T>
Var mean(Graph<T>& g, Var a) {
  const auto n = static_cast<T>(g.value(a).numel());
  T s = T(0);
  for (auto v : g.value(a).data()) s += v;
  return g.record(Tensor<T>::scalar(s / n), {a},
                  [a, n](Graph<T>& gr, const Tensor<T>& go) {
                    const T v = go[0] / n;
                    auto d = gr.grad_buffer(a).data();
                    for (auto& x : d) x += v;
                  },
                  "mean");
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: inner extent mismatch " + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, av.raw(), bv.raw(), out.raw());
  return g.record(std::move(out), {a, b},
                  [a, b, m, k, n](Graph<T>& gr, const Tensor<T>& go) {
                    if (gr.requires_grad(a)) {
                      // dA = G * B^T
                      kernels::gemm_nt(m, k, n, go.raw(), gr.value(b).raw(), gr.grad_buffer(a).raw());
                    }
                    if (gr.requires_grad(b)) {
                      // dB = A^T * G
                      kernels::gemm_tn(k, n, m, gr.value(a).raw(), go.raw(), gr.grad_buffer(b).raw());
                    }
                  },
                  "matmul");
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(xv.shape()) + " vs weight " +
                     shape_to_string(wv.shape()));
  }
  const std::size_t n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
  Tensor<T> out({n, out_dim});
  kernels::gemm_nt(n, out_dim, in, xv.raw(), wv.raw(), out.raw());
  return g.record(std::move(out), {x, w},
                  [x, w, n, in, out_dim](Graph<T>& gr, const Tensor<T>& go) {
                    if (gr.requires_grad(x)) {
                      // dX = G * W
                      kernels::gemm_nn(n, in, out_dim, go.raw(), gr.value(w).raw(), gr.grad_buffer(x).raw());
                    }
                    if (gr.requires_grad(w)) {
                      // dW = G^T * X
                      kernels::gemm_tn(out_dim, in, n, go.raw(), gr.value(x).raw(), gr.grad_buffer(w).raw());
                    }
                  },
                  "linear");
}

template <typename T>
Var bias_add(Graph<T>& g, Var x, Var bias) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw ShapeError("bias_add: input " + shape_to_string(xv.shape()) + " vs bias " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return g.record(std::move(out), {x, bias},
                  [x, bias, rows, cols](Graph<T>& gr, const Tensor<T>& go) {
                    gr.accumulate(x, go);
                    if (gr.requires_grad(bias)) {
                      auto d = gr.grad_buffer(bias).data();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) d[c] += go[r * cols + c];
                      }
                    }
                  },
                  "bias_add");
}

template <typename T>
Var normalize_rows(Graph<T>& g, Var w) {
  const auto& wv = g.value(w);
  if (wv.rank() != 2) throw ShapeError("normalize_rows expects a matrix, got " + shape_to_string(wv.shape()));
  const std::size_t rows = wv.dim(0), cols = wv.dim(1);
  std::vector<T> norms(rows);
  Tensor<T> out(wv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = wv.raw() + r * cols;
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * row[c];
    const T norm = std::sqrt(s);
    if (!(norm > T(0))) {
      throw std::domain_error("normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] / norm;
  }
  const Var self{g.size()};
  return g.record(std::move(out), {w},
                  [w, self, rows, cols, norms](Graph<T>& gr, const Tensor<T>& go) {
                    // d w = (g - u (u . g)) / |w|
                    const auto& u = gr.value(self);
                    auto d = gr.grad_buffer(w).data();
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T* ur = u.raw() + r * cols;
                      const T* gr_row = go.raw() + r * cols;
                      const T proj = kernels::dot(cols, ur, gr_row);
                      for (std::size_t c = 0; c < cols; ++c) {
                        d[r * cols + c] += (gr_row[c] - ur[c] * proj) / norms[r];
                      }
                    }
                  },
                  "normalize_rows");
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, Conv2dOptions opts) {
  const auto& xv = g.value(x);
  const auto& kv = g.value(kernel);
  if (xv.rank() != 4 || kv.rank() != 4) {
    throw ShapeError("conv2d expects rank-4 input and kernel, got " + shape_to_string(xv.shape()) + " and " +
                     shape_to_string(kv.shape()));
  }
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = kv.dim(0), cin_g = kv.dim(1), kh = kv.dim(2), kw = kv.dim(3);
  const std::size_t groups = opts.groups;
  if (groups == 0 || cin % groups != 0 || cout % groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (cin / groups != cin_g) {
    throw ShapeError("conv2d: input " + shape_to_string(xv.shape()) + " vs kernel " +
                     shape_to_string(kv.shape()) + " with groups " + std::to_string(groups));
  }
  const std::size_t oh = conv_out_extent(h, kh, opts.stride, opts.pad);
  const std::size_t ow = conv_out_extent(w, kw, opts.stride, opts.pad);
  const std::size_t cout_g = cout / groups;
  const std::size_t kdim = cin_g * kh * kw;
  const std::size_t plane = oh * ow;
  const kernels::ConvGeometry geo{cin_g, h, w, kh, kw, opts.stride, opts.pad, oh, ow};
  const bool pointwise = kh == 1 && kw == 1 && opts.stride == 1 && opts.pad == 0;

  Tensor<T> out({batch, cout, oh, ow});
  std::vector<T> cols(pointwise ? 0 : kdim * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T* xin = xv.raw() + (n * cin + gi * cin_g) * h * w;
      const T* src = xin;
      if (!pointwise) {
        kernels::im2col(geo, xin, cols.data());
        src = cols.data();
      }
      kernels::gemm_nn(cout_g, plane, kdim, kv.raw() + gi * cout_g * kdim, src,
                       out.raw() + (n * cout + gi * cout_g) * plane);
    }
  }

  auto backward = [=](Graph<T>& gr, const Tensor<T>& go) {
    const bool need_x = gr.requires_grad(x);
    const bool need_k = gr.requires_grad(kernel);
    const auto& xval = gr.value(x);
    const auto& kval = gr.value(kernel);
    T* dk = need_k ? gr.grad_buffer(kernel).raw() : nullptr;
    T* dx = need_x ? gr.grad_buffer(x).raw() : nullptr;
    std::vector<T> buf(pointwise ? 0 : kdim * plane);
    std::vector<T> dcols(pointwise ? 0 : kdim * plane);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* gout = go.raw() + (n * cout + gi * cout_g) * plane;
        const T* kg = kval.raw() + gi * cout_g * kdim;
        const T* xin = xval.raw() + (n * cin + gi * cin_g) * h * w;
        if (need_k) {
          const T* src = xin;
          if (!pointwise) {
            kernels::im2col(geo, xin, buf.data());
            src = buf.data();
          }
          kernels::gemm_nt(cout_g, kdim, plane, gout, src, dk + gi * cout_g * kdim);
        }
        if (need_x) {
          T* dxin = dx + (n * cin + gi * cin_g) * h * w;
          if (pointwise) {
            kernels::gemm_tn(kdim, plane, cout_g, kg, gout, dxin);
          } else {
            std::fill(dcols.begin(), dcols.end(), T(0));
            kernels::gemm_tn(kdim, plane, cout_g, kg, gout, dcols.data());
            kernels::col2im(geo, dcols.data(), dxin);
          }
        }
      }
    }
  };
  return g.record(std::move(out), {x, kernel}, backward, "conv2d");
}

template <typename T>
Var pool(Graph<T>& g, Var x, PoolKind kind) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4) throw ShapeError("pool expects [b x c x h x w], got " + shape_to_string(xv.shape()));
  const std::size_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (kind == PoolKind::kGlobalAvg) {
    const std::size_t plane = h * w;
    const T inv = T(1) / static_cast<T>(plane);
    Tensor<T> out({b, c});
    for (std::size_t i = 0; i < b * c; ++i) {
      T s = T(0);
      const T* src = xv.raw() + i * plane;
      for (std::size_t p = 0; p < plane; ++p) s += src[p];
      out[i] = s * inv;
    }
    return g.record(std::move(out), {x},
                    [x, b, c, plane, inv](Graph<T>& gr, const Tensor<T>& go) {
                      auto d = gr.grad_buffer(x).data();
                      for (std::size_t i = 0; i < b * c; ++i) {
                        const T v = go[i] * inv;
                        for (std::size_t p = 0; p < plane; ++p) d[i * plane + p] += v;
                      }
                    },
                    "global_avg_pool");
  }
  if (h < 2 || w < 2) throw ShapeError("avg2x2 pool on undersized input " + shape_to_string(xv.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({b, c, oh, ow});
  for (std::size_t i = 0; i < b * c; ++i) {
    const T* src = xv.raw() + i * h * w;
    T* dst = out.raw() + i * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* p = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
      }
    }
  }
  return g.record(std::move(out), {x},
                  [x, b, c, h, w, oh, ow](Graph<T>& gr, const Tensor<T>& go) {
                    T* d = gr.grad_buffer(x).raw();
                    for (std::size_t i = 0; i < b * c; ++i) {
                      T* dst = d + i * h * w;
                      const T* src = go.raw() + i * oh * ow;
                      for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                          const T v = src[y * ow + xx] * T(0.25);
                          T* p = dst + 2 * y * w + 2 * xx;
                          p[0] += v;
                          p[1] += v;
                          p[w] += v;
                          p[w + 1] += v;
                        }
                      }
                    }
                  },
                  "avg_pool2x2");
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> out = g.value(x).reshaped(std::move(shape));
  return g.record(std::move(out), {x},
                  [x](Graph<T>& gr, const Tensor<T>& go) {
                    gr.accumulate(x, go.reshaped(gr.value(x).shape()));
                  },
                  "reshape");
}

namespace {

// View of a tensor as [outer x extent x inner] around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

template <typename T>
Tensor<T> concat_tensors(const std::vector<const Tensor<T>*>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape shape = parts.front()->shape();
  std::size_t total = 0;
  for (const auto* p : parts) {
    Shape expect = parts.front()->shape();
    if (p->rank() != expect.size()) require_same_shape(expect, p->shape(), "concat");
    expect[axis] = p->dim(axis);
    require_same_shape(expect, p->shape(), "concat");
    total += p->dim(axis);
  }
  shape[axis] = total;
  Tensor<T> out(shape);
  const auto ov = axis_view(shape, axis);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const auto pv = axis_view(p->shape(), axis);
    for (std::size_t o = 0; o < ov.outer; ++o) {
      const T* src = p->raw() + o * pv.extent * pv.inner;
      T* dst = out.raw() + (o * ov.extent + offset) * ov.inner;
      std::copy(src, src + pv.extent * pv.inner, dst);
    }
    offset += pv.extent;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_tensor(const Tensor<T>& x, std::size_t axis, std::size_t parts) {
  const auto v = axis_view(x.shape(), axis);
  if (parts == 0 || v.extent % parts != 0) {
    throw ShapeError("split: extent " + std::to_string(v.extent) + " of axis " + std::to_string(axis) +
                     " not divisible into " + std::to_string(parts) + " parts");
  }
  const std::size_t piece = v.extent / parts;
  std::vector<Tensor<T>> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    Shape shape = x.shape();
    shape[axis] = piece;
    Tensor<T> t(shape);
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* src = x.raw() + (o * v.extent + p * piece) * v.inner;
      std::copy(src, src + piece * v.inner, t.raw() + o * piece * v.inner);
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
Var concat(Graph<T>& g, const std::vector<Var>& parts, std::size_t axis) {
  std::vector<const Tensor<T>*> values;
  for (auto p : parts) values.push_back(&g.value(p));
  Tensor<T> out = concat_tensors(values, axis);
  std::vector<std::size_t> extents;
  for (const auto* v : values) extents.push_back(v->dim(axis));
  return g.record(std::move(out), parts,
                  [parts, axis, extents](Graph<T>& gr, const Tensor<T>& go) {
                    const auto ov = axis_view(go.shape(), axis);
                    std::size_t offset = 0;
                    for (std::size_t i = 0; i < parts.size(); ++i) {
                      const std::size_t e = extents[i];
                      if (gr.requires_grad(parts[i])) {
                        T* d = gr.grad_buffer(parts[i]).raw();
                        for (std::size_t o = 0; o < ov.outer; ++o) {
                          const T* src = go.raw() + (o * ov.extent + offset) * ov.inner;
                          T* dst = d + o * e * ov.inner;
                          for (std::size_t k = 0; k < e * ov.inner; ++k) dst[k] += src[k];
                        }
                      }
                      offset += e;
                    }
                  },
                  "concat");
}

template <typename T>
std::vector<Var> split(Graph<T>& g, Var x, std::size_t axis, std::size_t parts) {
  auto pieces = split_tensor(g.value(x), axis, parts);
  std::vector<Var> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    out.push_back(g.record(std::move(pieces[p]), {x},
                           [x, axis, parts, p](Graph<T>& gr, const Tensor<T>& go) {
                             const auto v = axis_view(gr.value(x).shape(), axis);
                             const std::size_t piece = v.extent / parts;
                             T* d = gr.grad_buffer(x).raw();
                             for (std::size_t o = 0; o < v.outer; ++o) {
                               T* dst = d + (o * v.extent + p * piece) * v.inner;
                               const T* src = go.raw() + o * piece * v.inner;
                               for (std::size_t k = 0; k < piece * v.inner; ++k) dst[k] += src[k];
                             }
                           },
                           "split"));
  }
  return out;
}

#define SHAKENORM_INSTANTIATE_OPS(T)                                                          \
  template Var elementwise<T>(Graph<T>&, Elementwise, Var, Var, T);                          \
  template Var sum<T>(Graph<T>&, Var);                                                       \
  template Var mean<T>(Graph<T>&, Var);                                                      \
  template Var matmul<T>(Graph<T>&, Var, Var);                                               \
  template Var linear<T>(Graph<T>&, Var, Var);                                               \
  template Var bias_add<T>(Graph<T>&, Var, Var);                                             \
  template Var normalize_rows<T>(Graph<T>&, Var);                                            \
  template Var conv2d<T>(Graph<T>&, Var, Var, Conv2dOptions);                                \
  template Var pool<T>(Graph<T>&, Var, PoolKind);                                            \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                            \
  template Var concat<T>(Graph<T>&, const std::vector<Var>&, std::size_t);                   \
  template std::vector<Var> split<T>(Graph<T>&, Var, std::size_t, std::size_t);              \
  template Tensor<T> concat_tensors<T>(const std::vector<const Tensor<T>*>&, std::size_t);   \
  template std::vector<Tensor<T>> split_tensor<T>(const Tensor<T>&, std::size_t, std::size_t);

SHAKENORM_INSTANTIATE_OPS(float)
SHAKENORM_INSTANTIATE_OPS(double)

}  // namespace shakenorm
