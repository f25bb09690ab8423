// Dense inner loops. Row-major, accumulate into the destination. Loop orders keep the
// innermost loop contiguous so the compiler can vectorize; summation order is fixed.
#ifndef SHAKENORM_SRC_KERNELS_HPP_
#define SHAKENORM_SRC_KERNELS_HPP_

#include <cstddef>

namespace shakenorm::kernels {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(std::size_t n, const T* a, const T* b) {
  T s = T(0);
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(k, a + i * k, b + j * k);
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // input slice
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;
};

// Output columns [lo, hi) whose input column ox*stride + kj - pad lies inside [0, width).
inline void valid_range(const ConvGeometry& geo, std::size_t kj, std::size_t& lo, std::size_t& hi) {
  lo = kj >= geo.pad ? 0 : (geo.pad - kj + geo.stride - 1) / geo.stride;
  const std::size_t limit = geo.width + geo.pad;  // ix < width  <=>  ox*stride + kj < width + pad
  hi = kj >= limit ? 0 : (limit - kj - 1) / geo.stride + 1;
  if (hi > geo.out_w) hi = geo.out_w;
  if (lo > hi) lo = hi;
}

// cols[(c*kh + ki)*kw + kj][oy*out_w + ox] = x[c][oy*stride - pad + ki][ox*stride - pad + kj]
template <typename T>
void im2col(const ConvGeometry& geo, const T* x, T* cols) {
  const std::size_t plane = geo.out_h * geo.out_w;
  for (std::size_t c = 0; c < geo.channels; ++c) {
    const T* xc = x + c * geo.height * geo.width;
    for (std::size_t ki = 0; ki < geo.kh; ++ki) {
      for (std::size_t kj = 0; kj < geo.kw; ++kj) {
        T* row = cols + ((c * geo.kh + ki) * geo.kw + kj) * plane;
        std::size_t lo, hi;
        valid_range(geo, kj, lo, hi);
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ki) - static_cast<long>(geo.pad);
          T* dst = row + oy * geo.out_w;
          if (iy < 0 || iy >= static_cast<long>(geo.height) || lo == hi) {
            for (std::size_t ox = 0; ox < geo.out_w; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * geo.width + (lo * geo.stride + kj - geo.pad);
          for (std::size_t ox = 0; ox < lo; ++ox) dst[ox] = T(0);
          if (geo.stride == 1) {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[lo + i] = src[i];
          } else {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[lo + i] = src[i * geo.stride];
          }
          for (std::size_t ox = hi; ox < geo.out_w; ++ox) dst[ox] = T(0);
        }
      }
    }
  }
}

// Adjoint of im2col: dx += scatter(cols).
template <typename T>
void col2im(const ConvGeometry& geo, const T* cols, T* dx) {
  const std::size_t plane = geo.out_h * geo.out_w;
  for (std::size_t c = 0; c < geo.channels; ++c) {
    T* xc = dx + c * geo.height * geo.width;
    for (std::size_t ki = 0; ki < geo.kh; ++ki) {
      for (std::size_t kj = 0; kj < geo.kw; ++kj) {
        const T* row = cols + ((c * geo.kh + ki) * geo.kw + kj) * plane;
        std::size_t lo, hi;
        valid_range(geo, kj, lo, hi);
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ki) - static_cast<long>(geo.pad);
          if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
          if (lo == hi) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * geo.width + (lo * geo.stride + kj - geo.pad);
          const T* src = row + oy * geo.out_w + lo;
          if (geo.stride == 1) {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[i] += src[i];
          } else {
            for (std::size_t i = 0; i < hi - lo; ++i) dst[i * geo.stride] += src[i];
          }
        }
      }
    }
  }
}

}  // namespace shakenorm::kernels

#endif  // SHAKENORM_SRC_KERNELS_HPP_
