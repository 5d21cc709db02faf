#pragma once

// Brute-force reference implementations used as independent oracles. They use
// plain loops over std::vector<double> and never call into the library's
// vectorized code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "dras/rng.hpp"
#include "dras/tensor.hpp"

namespace oracle {

using dras::Index;

inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

// ‖a − b‖ / max(‖a‖, ‖b‖) over flattened arrays.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
  return std::sqrt(diff) / scale;
}

template <typename M>
std::vector<double> flatten(const M& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Index k = 0; k < m.size(); ++k) out.push_back(static_cast<double>(m.data()[k]));
  return out;
}

// Mean over columns of the Euclidean distance between column pairs.
inline double mean_column_distance(const std::vector<std::vector<double>>& ref,
                                   const std::vector<std::vector<double>>& syn) {
  double total = 0;
  for (std::size_t b = 0; b < ref.size(); ++b) {
    double ss = 0;
    for (std::size_t k = 0; k < ref[b].size(); ++k) ss += (ref[b][k] - syn[b][k]) * (ref[b][k] - syn[b][k]);
    total += std::sqrt(ss);
  }
  return total / static_cast<double>(ref.size());
}

inline double mean_abs_difference(const std::vector<double>& a, const std::vector<double>& b) {
  double total = 0;
  for (std::size_t k = 0; k < a.size(); ++k) total += std::abs(a[k] - b[k]);
  return total / static_cast<double>(a.size());
}

inline double mean_log(const std::vector<double>& p) {
  double s = 0;
  for (double v : p) s += std::log(v);
  return s / static_cast<double>(p.size());
}

inline double mean_log_complement(const std::vector<double>& p) {
  double s = 0;
  for (double v : p) s += std::log(1.0 - v);
  return s / static_cast<double>(p.size());
}

template <typename M>
std::vector<std::vector<double>> columns(const M& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.cols()));
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(c)].push_back(static_cast<double>(m(r, c)));
  return out;
}

// Direct cross-correlation with zero padding. Weight layout (out_c, k·k·in_c)
// with column (ky·k + kx)·in_c + ci.
inline dras::Tensor<double> naive_conv(const dras::Tensor<double>& x, const dras::Matrix<double>& w,
                                       const dras::Matrix<double>& b, Index k, Index stride, Index pad) {
  const Index oc = w.rows();
  const Index oh = (x.h + 2 * pad - k) / stride + 1, ow = (x.w + 2 * pad - k) / stride + 1;
  dras::Tensor<double> y(x.n, oc, oh, ow);
  for (Index n = 0; n < x.n; ++n)
    for (Index o = 0; o < oc; ++o)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          double acc = b(o, 0);
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
              for (Index ci = 0; ci < x.c; ++ci) acc += w(o, (ky * k + kx) * x.c + ci) * x.at(n, ci, iy, ix);
            }
          y.at(n, o, oy, ox) = acc;
        }
  return y;
}

// Scatter definition of the transposed convolution. Weight layout
// (in_c, k·k·out_c) with column (ky·k + kx)·out_c + co.
inline dras::Tensor<double> naive_deconv(const dras::Tensor<double>& x, const dras::Matrix<double>& w,
                                         const dras::Matrix<double>& b, Index out_c, Index k, Index stride, Index pad,
                                         Index output_pad) {
  const Index oh = (x.h - 1) * stride - 2 * pad + k + output_pad;
  const Index ow = (x.w - 1) * stride - 2 * pad + k + output_pad;
  dras::Tensor<double> y(x.n, out_c, oh, ow);
  y.data.setZero();
  for (Index n = 0; n < x.n; ++n)
    for (Index ci = 0; ci < x.c; ++ci)
      for (Index iy = 0; iy < x.h; ++iy)
        for (Index ix = 0; ix < x.w; ++ix)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index oy = iy * stride - pad + ky, ox = ix * stride - pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              for (Index co = 0; co < out_c; ++co)
                y.at(n, co, oy, ox) += w(ci, (ky * k + kx) * out_c + co) * x.at(n, ci, iy, ix);
            }
  for (Index n = 0; n < x.n; ++n)
    for (Index co = 0; co < out_c; ++co)
      for (Index yy = 0; yy < oh; ++yy)
        for (Index xx = 0; xx < ow; ++xx) y.at(n, co, yy, xx) += b(co, 0);
  return y;
}

// Central finite differences of f with respect to every entry of `values`.
inline std::vector<double> central_difference(double* values, std::size_t count, const std::function<double()>& f,
                                              double step = 1e-4) {
  std::vector<double> g(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double saved = values[k];
    values[k] = saved + step;
    const double up = f();
    values[k] = saved - step;
    const double down = f();
    values[k] = saved;
    g[k] = (up - down) / (2 * step);
  }
  return g;
}

inline dras::Matrix<double> random_matrix(Index rows, Index cols, dras::Rng& rng, double lo = -1, double hi = 1) {
  dras::Matrix<double> m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(lo, hi);
  return m;
}

inline dras::Tensor<double> random_tensor(Index n, Index c, Index h, Index w, dras::Rng& rng) {
  dras::Tensor<double> t(n, c, h, w);
  t.data = random_matrix(c, n * h * w, rng);
  return t;
}

}  // namespace oracle
