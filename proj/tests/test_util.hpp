// Shared fixtures and brute-force oracles for the unit tests.
#ifndef SHAKENORM_TESTS_TEST_UTIL_HPP_
#define SHAKENORM_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <cstddef>
#include <vector>

#include "shakenorm/tensor.hpp"

namespace shakenorm::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Tensor<double>::randn(shape, rng, scale);
}

/// Weighted sum with fixed pseudo-random weights, so that every output element matters.
inline std::vector<double> probe_weights(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (auto& v : w) v = u(rng);
  return w;
}

/// Naive convolution straight from the definition.
inline Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride,
                                    std::size_t pad, std::size_t groups) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0), cg = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t og = cout / groups;
  (void)cin;
  Tensor<double> out({n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          const std::size_t grp = co / og;
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += x.at({b, grp * cg + c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) *
                     k.at({co, c, i, j});
              }
          out.at({b, co, y, xx}) = s;
        }
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace shakenorm::testing

#endif  // SHAKENORM_TESTS_TEST_UTIL_HPP_
