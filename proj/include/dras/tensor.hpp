#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "dras/error.hpp"

namespace dras {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Batched activation in channels-by-positions layout: `data` has `c` rows and
// `n*h*w` columns, column (i*h + y)*w + x holding pixel (y, x) of sample i.
// Feature batches use h = w = 1, so `data` is simply features x batch.
template <typename Scalar>
struct Tensor {
  Index n = 0;
  Index c = 0;
  Index h = 1;
  Index w = 1;
  Matrix<Scalar> data;

  Tensor() = default;
  Tensor(Index n_, Index c_, Index h_, Index w_)
      : n(n_), c(c_), h(h_), w(w_), data(Matrix<Scalar>::Zero(c_, n_ * h_ * w_)) {}

  static Tensor features(Matrix<Scalar> m) {
    Tensor t;
    t.n = m.cols();
    t.c = m.rows();
    t.data = std::move(m);
    return t;
  }

  Index positions() const { return h * w; }
  Index size() const { return data.size(); }

  Scalar& at(Index i, Index ch, Index y, Index x) { return data(ch, (i * h + y) * w + x); }
  Scalar at(Index i, Index ch, Index y, Index x) const { return data(ch, (i * h + y) * w + x); }

  // Columns belonging to sample i.
  auto sample(Index i) { return data.middleCols(i * h * w, h * w); }
  auto sample(Index i) const { return data.middleCols(i * h * w, h * w); }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.n = n;
    t.c = c;
    t.h = h;
    t.w = w;
    t.data = data.template cast<Other>();
    return t;
  }
};

template <typename Scalar>
std::string shape_string(const Tensor<Scalar>& t) {
  return "[" + std::to_string(t.n) + "x" + std::to_string(t.c) + "x" + std::to_string(t.h) + "x" +
         std::to_string(t.w) + "]";
}

// Concatenates samples along the batch dimension.
template <typename Scalar>
Tensor<Scalar> stack(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) return {};
  Tensor<Scalar> out;
  out.c = parts.front().c;
  out.h = parts.front().h;
  out.w = parts.front().w;
  for (const auto& p : parts) {
    if (p.c != out.c || p.h != out.h || p.w != out.w)
      throw Error(Errc::ShapeMismatch, "stack: " + shape_string(p) + " vs " + shape_string(parts.front()));
    out.n += p.n;
  }
  out.data.resize(out.c, out.n * out.h * out.w);
  Index col = 0;
  for (const auto& p : parts) {
    out.data.middleCols(col, p.data.cols()) = p.data;
    col += p.data.cols();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& parts) {
  return stack(std::span<const Tensor<Scalar>>(parts));
}

// Samples [first, first + count).
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& t, Index first, Index count) {
  Tensor<Scalar> out;
  out.n = count;
  out.c = t.c;
  out.h = t.h;
  out.w = t.w;
  out.data = t.data.middleCols(first * t.h * t.w, count * t.h * t.w);
  return out;
}

// Mirror every sample about its vertical axis.
template <typename Scalar>
Tensor<Scalar> flip_horizontal(const Tensor<Scalar>& t) {
  Tensor<Scalar> out(t.n, t.c, t.h, t.w);
  for (Index i = 0; i < t.n; ++i)
    for (Index y = 0; y < t.h; ++y)
      for (Index x = 0; x < t.w; ++x)
        out.data.col((i * t.h + y) * t.w + x) = t.data.col((i * t.h + y) * t.w + (t.w - 1 - x));
  return out;
}

// Bilinear interpolation weights (half-pixel centres, edge clamped) mapping
// `in` samples to `out` samples along one axis: out = R * in.
template <typename Scalar>
Matrix<Scalar> bilinear_matrix(Index out, Index in) {
  Matrix<Scalar> r = Matrix<Scalar>::Zero(out, in);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
    const auto lo = static_cast<Index>(src);
    const Index hi = lo + 1 < in ? lo + 1 : lo;
    const double frac = src - static_cast<double>(lo);
    r(o, lo) += static_cast<Scalar>(1.0 - frac);
    r(o, hi) += static_cast<Scalar>(frac);
  }
  return r;
}

// Separable resampling Y = Ry X Rx^T applied to every channel of every sample.
template <typename Scalar>
Tensor<Scalar> resample(const Tensor<Scalar>& t, const Matrix<Scalar>& ry, const Matrix<Scalar>& rx) {
  const Index oh = ry.rows();
  const Index ow = rx.rows();
  Tensor<Scalar> out(t.n, t.c, oh, ow);
  Matrix<Scalar> plane(t.h, t.w);
  for (Index i = 0; i < t.n; ++i) {
    for (Index ch = 0; ch < t.c; ++ch) {
      for (Index y = 0; y < t.h; ++y)
        for (Index x = 0; x < t.w; ++x) plane(y, x) = t.at(i, ch, y, x);
      const Matrix<Scalar> res = ry * plane * rx.transpose();
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) out.at(i, ch, y, x) = res(y, x);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& t, Index oh, Index ow) {
  return resample(t, bilinear_matrix<Scalar>(oh, t.h), bilinear_matrix<Scalar>(ow, t.w));
}

// Adjoint of resize_bilinear: maps a gradient on the resized tensor back to
// the source grid of size (ih, iw).
template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& grad, Index ih, Index iw) {
  const Matrix<Scalar> ry = bilinear_matrix<Scalar>(grad.h, ih);
  const Matrix<Scalar> rx = bilinear_matrix<Scalar>(grad.w, iw);
  return resample(grad, Matrix<Scalar>(ry.transpose()), Matrix<Scalar>(rx.transpose()));
}

// 64-bit FNV-1a over the raw bytes of a matrix; used to prove parameters
// are bit-identical.
template <typename Scalar>
std::uint64_t fnv1a(const Matrix<Scalar>& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const auto count = static_cast<std::size_t>(m.size()) * sizeof(Scalar);
  for (std::size_t k = 0; k < count; ++k) {
    h ^= bytes[k];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dras
