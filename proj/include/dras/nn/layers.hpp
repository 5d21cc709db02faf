#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dras/error.hpp"
#include "dras/rng.hpp"
#include "dras/tensor.hpp"

namespace dras::nn {

// Unrolls k x k patches into columns. Row (ky*k + kx)*C + ch of column
// (i*oh + oy)*ow + ox holds x[i, ch, oy*stride - pad + ky, ox*stride - pad + kx]
// (zero outside the image).
template <typename Scalar>
Matrix<Scalar> im2col(const Tensor<Scalar>& x, Index k, Index stride, Index pad, Index oh, Index ow) {
  const Index c = x.c;
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(k * k * c, x.n * oh * ow);
  for (Index i = 0; i < x.n; ++i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Index col = (i * oh + oy) * ow + ox;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            cols.col(col).segment((ky * k + kx) * c, c) = x.data.col((i * x.h + iy) * x.w + ix);
          }
        }
      }
  return cols;
}

// Adjoint of im2col: scatters (and sums) columns back onto an n x c x h x w grid.
template <typename Scalar>
Tensor<Scalar> col2im(const Matrix<Scalar>& cols, Index n, Index c, Index h, Index w, Index k, Index stride,
                      Index pad, Index oh, Index ow) {
  Tensor<Scalar> x(n, c, h, w);
  for (Index i = 0; i < n; ++i)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Index col = (i * oh + oy) * ow + ox;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            x.data.col((i * h + iy) * w + ix) += cols.col(col).segment((ky * k + kx) * c, c);
          }
        }
      }
  return x;
}

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;

  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x) const = 0;

  // Given the layer input x, its output y and dL/dy: accumulates parameter
  // gradients into `grads` (when non-null) and returns dL/dx (empty when
  // need_dx is false).
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& y, const Tensor<Scalar>& dy,
                                  std::vector<Matrix<Scalar>>* grads, bool need_dx) const = 0;

  std::vector<Matrix<Scalar>>& params() { return params_; }
  const std::vector<Matrix<Scalar>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

 protected:
  std::vector<Matrix<Scalar>> params_;
  std::vector<std::string> names_;

  void init_uniform(Rng& rng, double bound) {
    for (auto& p : params_)
      for (Index k = 0; k < p.size(); ++k) p.data()[k] = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(Index in_c, Index out_c, Index k, Index stride, Index pad, Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
    this->params_ = {Matrix<Scalar>(out_c, k * k * in_c), Matrix<Scalar>(out_c, 1)};
    this->names_ = {"weight", "bias"};
    this->init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(k * k * in_c)));
  }

  LayerPtr<Scalar> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string kind() const override { return "conv"; }

  Index out_size(Index in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    check(x);
    const Index oh = out_size(x.h), ow = out_size(x.w);
    Tensor<Scalar> y;
    y.n = x.n;
    y.c = out_c_;
    y.h = oh;
    y.w = ow;
    y.data.noalias() = weight() * im2col(x, k_, stride_, pad_, oh, ow);
    y.data.colwise() += bias().col(0);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& y, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>* grads, bool need_dx) const override {
    Tensor<Scalar> dx;
    const Matrix<Scalar> cols = im2col(x, k_, stride_, pad_, y.h, y.w);
    if (grads) {
      (*grads)[0].noalias() += dy.data * cols.transpose();
      (*grads)[1] += dy.data.rowwise().sum();
    }
    if (need_dx) {
      const Matrix<Scalar> dcols = weight().transpose() * dy.data;
      dx = col2im(dcols, x.n, x.c, x.h, x.w, k_, stride_, pad_, y.h, y.w);
    }
    return dx;
  }

 private:
  Index in_c_, out_c_, k_, stride_, pad_;

  const Matrix<Scalar>& weight() const { return this->params_[0]; }
  const Matrix<Scalar>& bias() const { return this->params_[1]; }

  void check(const Tensor<Scalar>& x) const {
    if (x.c != in_c_)
      throw Error(Errc::ShapeMismatch, "conv expects " + std::to_string(in_c_) + " channels, got " + shape_string(x));
  }
};

// Transposed convolution (the adjoint of Conv2d with the same geometry).
// Weight layout: in_c x (k*k*out_c).
template <typename Scalar>
class ConvTranspose2d final : public Layer<Scalar> {
 public:
  ConvTranspose2d(Index in_c, Index out_c, Index k, Index stride, Index pad, Index output_pad, Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), output_pad_(output_pad) {
    this->params_ = {Matrix<Scalar>(in_c, k * k * out_c), Matrix<Scalar>(out_c, 1)};
    this->names_ = {"weight", "bias"};
    const double fan_in = static_cast<double>(in_c * k * k) / static_cast<double>(stride * stride);
    this->init_uniform(rng, 1.0 / std::sqrt(fan_in));
  }

  LayerPtr<Scalar> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
  std::string kind() const override { return "deconv"; }

  Index out_size(Index in) const { return (in - 1) * stride_ - 2 * pad_ + k_ + output_pad_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    if (x.c != in_c_)
      throw Error(Errc::ShapeMismatch, "deconv expects " + std::to_string(in_c_) + " channels, got " + shape_string(x));
    const Index oh = out_size(x.h), ow = out_size(x.w);
    const Matrix<Scalar> cols = weight().transpose() * x.data;
    Tensor<Scalar> y = col2im(cols, x.n, out_c_, oh, ow, k_, stride_, pad_, x.h, x.w);
    y.data.colwise() += bias().col(0);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>&, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>* grads, bool need_dx) const override {
    Tensor<Scalar> dx;
    const Matrix<Scalar> dcols = im2col(dy, k_, stride_, pad_, x.h, x.w);
    if (grads) {
      (*grads)[0].noalias() += x.data * dcols.transpose();
      (*grads)[1] += dy.data.rowwise().sum();
    }
    if (need_dx) {
      dx.n = x.n;
      dx.c = x.c;
      dx.h = x.h;
      dx.w = x.w;
      dx.data.noalias() = weight() * dcols;
    }
    return dx;
  }

 private:
  Index in_c_, out_c_, k_, stride_, pad_, output_pad_;

  const Matrix<Scalar>& weight() const { return this->params_[0]; }
  const Matrix<Scalar>& bias() const { return this->params_[1]; }
};

template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(Index in, Index out, Rng& rng) : in_(in), out_(out) {
    this->params_ = {Matrix<Scalar>(out, in), Matrix<Scalar>(out, 1)};
    this->names_ = {"weight", "bias"};
    this->init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(in)));
  }

  LayerPtr<Scalar> clone() const override { return std::make_unique<Linear>(*this); }
  std::string kind() const override { return "linear"; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    if (x.c != in_ || x.h != 1 || x.w != 1)
      throw Error(Errc::ShapeMismatch, "linear expects " + std::to_string(in_) + " features, got " + shape_string(x));
    Tensor<Scalar> y;
    y.n = x.n;
    y.c = out_;
    y.data.noalias() = this->params_[0] * x.data;
    y.data.colwise() += this->params_[1].col(0);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>&, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>* grads, bool need_dx) const override {
    if (grads) {
      (*grads)[0].noalias() += dy.data * x.data.transpose();
      (*grads)[1] += dy.data.rowwise().sum();
    }
    Tensor<Scalar> dx;
    if (need_dx) {
      dx.n = x.n;
      dx.c = x.c;
      dx.data.noalias() = this->params_[0].transpose() * dy.data;
    }
    return dx;
  }

 private:
  Index in_, out_;
};

// Elementwise activations. backward uses whichever of x / y is cheaper.
enum class Activation { Relu, LeakyRelu, Tanh, Sigmoid };

template <typename Scalar>
class Pointwise final : public Layer<Scalar> {
 public:
  explicit Pointwise(Activation a, Scalar slope = Scalar(0.2)) : act_(a), slope_(slope) {}

  LayerPtr<Scalar> clone() const override { return std::make_unique<Pointwise>(*this); }
  std::string kind() const override {
    switch (act_) {
      case Activation::Relu: return "relu";
      case Activation::LeakyRelu: return "lrelu";
      case Activation::Tanh: return "tanh";
      case Activation::Sigmoid: return "sigmoid";
    }
    return "?";
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y = x;
    auto a = y.data.array();
    switch (act_) {
      case Activation::Relu: a = a.max(Scalar(0)); break;
      case Activation::LeakyRelu: a = (a > Scalar(0)).select(a, a * slope_); break;
      case Activation::Tanh: a = a.tanh(); break;
      case Activation::Sigmoid: a = Scalar(1) / (Scalar(1) + (-a).exp()); break;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& y, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>*, bool need_dx) const override {
    Tensor<Scalar> dx;
    if (!need_dx) return dx;
    dx = dy;
    auto d = dx.data.array();
    switch (act_) {
      case Activation::Relu: d = (x.data.array() > Scalar(0)).select(d, Scalar(0)); break;
      case Activation::LeakyRelu: d = (x.data.array() > Scalar(0)).select(d, d * slope_); break;
      case Activation::Tanh: d = d * (Scalar(1) - y.data.array().square()); break;
      case Activation::Sigmoid: d = d * y.data.array() * (Scalar(1) - y.data.array()); break;
    }
    return dx;
  }

 private:
  Activation act_;
  Scalar slope_;
};

// c x h x w  <->  (c*h*w) x 1 x 1. A sample's columns are contiguous, so both
// directions are pure reinterpretations of the same storage.
template <typename Scalar>
class Flatten final : public Layer<Scalar> {
 public:
  LayerPtr<Scalar> clone() const override { return std::make_unique<Flatten>(*this); }
  std::string kind() const override { return "flatten"; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y;
    y.n = x.n;
    y.c = x.c * x.h * x.w;
    y.data = Eigen::Map<const Matrix<Scalar>>(x.data.data(), y.c, x.n);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>&, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>*, bool need_dx) const override {
    Tensor<Scalar> dx;
    if (!need_dx) return dx;
    dx.n = x.n;
    dx.c = x.c;
    dx.h = x.h;
    dx.w = x.w;
    dx.data = Eigen::Map<const Matrix<Scalar>>(dy.data.data(), x.c, x.n * x.h * x.w);
    return dx;
  }
};

template <typename Scalar>
class Unflatten final : public Layer<Scalar> {
 public:
  Unflatten(Index c, Index h, Index w) : c_(c), h_(h), w_(w) {}

  LayerPtr<Scalar> clone() const override { return std::make_unique<Unflatten>(*this); }
  std::string kind() const override { return "unflatten"; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    if (x.c != c_ * h_ * w_ || x.h != 1 || x.w != 1)
      throw Error(Errc::ShapeMismatch, "unflatten: bad input " + shape_string(x));
    Tensor<Scalar> y;
    y.n = x.n;
    y.c = c_;
    y.h = h_;
    y.w = w_;
    y.data = Eigen::Map<const Matrix<Scalar>>(x.data.data(), c_, x.n * h_ * w_);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>&, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>*, bool need_dx) const override {
    Tensor<Scalar> dx;
    if (!need_dx) return dx;
    dx.n = x.n;
    dx.c = x.c;
    dx.data = Eigen::Map<const Matrix<Scalar>>(dy.data.data(), x.c, x.n);
    return dx;
  }

 private:
  Index c_, h_, w_;
};

// 2x2 max pooling with stride 2 (VGG blocks).
template <typename Scalar>
class MaxPool2 final : public Layer<Scalar> {
 public:
  LayerPtr<Scalar> clone() const override { return std::make_unique<MaxPool2>(*this); }
  std::string kind() const override { return "maxpool"; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y(x.n, x.c, x.h / 2, x.w / 2);
    for (Index i = 0; i < x.n; ++i)
      for (Index oy = 0; oy < y.h; ++oy)
        for (Index ox = 0; ox < y.w; ++ox) {
          auto out = y.data.col((i * y.h + oy) * y.w + ox);
          out = x.data.col((i * x.h + 2 * oy) * x.w + 2 * ox);
          for (Index d = 1; d < 4; ++d)
            out = out.cwiseMax(x.data.col((i * x.h + 2 * oy + d / 2) * x.w + 2 * ox + d % 2));
        }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& y, const Tensor<Scalar>& dy,
                          std::vector<Matrix<Scalar>>*, bool need_dx) const override {
    Tensor<Scalar> dx;
    if (!need_dx) return dx;
    dx = Tensor<Scalar>(x.n, x.c, x.h, x.w);
    for (Index i = 0; i < x.n; ++i)
      for (Index oy = 0; oy < y.h; ++oy)
        for (Index ox = 0; ox < y.w; ++ox) {
          const Index oc = (i * y.h + oy) * y.w + ox;
          for (Index ch = 0; ch < x.c; ++ch) {
            // First maximal input receives the gradient.
            for (Index d = 0; d < 4; ++d) {
              const Index ic = (i * x.h + 2 * oy + d / 2) * x.w + 2 * ox + d % 2;
              if (x.data(ch, ic) == y.data(ch, oc)) {
                dx.data(ch, ic) += dy.data(ch, oc);
                break;
              }
            }
          }
        }
    return dx;
  }
};

}  // namespace dras::nn
