#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "dlif/tensor.hpp"

namespace dlif_test {

inline dlif::Tensor random_tensor(dlif::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> data(static_cast<size_t>(dlif::numel(shape)));
  for (double& v : data) v = d(rng);
  return dlif::make_tensor(std::move(shape), std::move(data), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Straight-line NCHW convolution used as a reference for forward passes.
struct NaiveMap {
  std::vector<double> data;
  int n = 0, c = 0, h = 0, w = 0;
  double at(int ni, int ci, int y, int x) const {
    return data[((static_cast<size_t>(ni) * c + ci) * h + y) * w + x];
  }
};

inline NaiveMap naive_conv2d(const NaiveMap& in, const dlif::Tensor& k, const dlif::Tensor& bias,
                             int stride, int pad, bool relu_after) {
  const int co = k->dim(0), ci = k->dim(1), kh = k->dim(2), kw = k->dim(3);
  NaiveMap out;
  out.n = in.n;
  out.c = co;
  out.h = (in.h + 2 * pad - kh) / stride + 1;
  out.w = (in.w + 2 * pad - kw) / stride + 1;
  out.data.assign(static_cast<size_t>(out.n) * co * out.h * out.w, 0.0);
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < co; ++o) {
      for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
          double acc = bias ? bias->data[o] : 0.0;
          for (int i = 0; i < ci; ++i) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const int yy = y * stride + u - pad;
                const int xx = x * stride + v - pad;
                if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
                acc += in.at(n, i, yy, xx) *
                       k->data[((static_cast<size_t>(o) * ci + i) * kh + u) * kw + v];
              }
            }
          }
          if (relu_after && acc < 0.0) acc = 0.0;
          out.data[((static_cast<size_t>(n) * co + o) * out.h + y) * out.w + x] = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace dlif_test
