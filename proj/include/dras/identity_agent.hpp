#pragma once

#include <cstdint>

#include "dras/losses.hpp"
#include "dras/nn/network.hpp"
#include "dras/scale.hpp"

namespace dras {

struct IdentityAgentConfig {
  Scale scale = Scale::Desk;
  Index z_dim = 50;
};

// Identity encoder: strided conv stack -> FC -> tanh, 128x128x3 -> z_dim.
// paper: 5x5 convolutions with 64/128/256/512 filters; desk: 4x4 with 8/16/32/32.
template <typename Scalar>
class IdentityEncoder {
 public:
  static constexpr Index kInputSize = 128;

  IdentityEncoder() = default;
  IdentityEncoder(const IdentityAgentConfig& cfg, Rng& rng) : z_dim_(cfg.z_dim) {
    using namespace nn;
    if (cfg.z_dim < 1) throw Error(Errc::InvalidDim, "z_dim must be >= 1");
    const bool paper = cfg.scale == Scale::Paper;
    const Index k = paper ? 5 : 4;
    const Index pad = paper ? 2 : 1;
    const Index widths[] = {3, paper ? 64 : 8, paper ? 128 : 16, paper ? 256 : 32, paper ? 512 : 32};
    for (int b = 0; b < 4; ++b) {
      net_.template emplace<Conv2d<Scalar>>(widths[b], widths[b + 1], k, 2, pad, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
    }
    net_.template emplace<Flatten<Scalar>>();
    net_.template emplace<Linear<Scalar>>(8 * 8 * widths[4], cfg.z_dim, rng);
    net_.template emplace<Pointwise<Scalar>>(Activation::Tanh);
  }

  Index z_dim() const { return z_dim_; }

  // images: n x 3 x 128 x 128  ->  z_dim x n.
  Matrix<Scalar> encode(const Tensor<Scalar>& images) const {
    check(images);
    return net_.forward(images).data;
  }

  Matrix<Scalar> encode(const Tensor<Scalar>& images, typename nn::Network<Scalar>::Trace& trace) const {
    check(images);
    return net_.forward(images, trace).data;
  }

  nn::Network<Scalar>& network() { return net_; }
  const nn::Network<Scalar>& network() const { return net_; }

 private:
  Index z_dim_ = 0;
  nn::Network<Scalar> net_;

  static void check(const Tensor<Scalar>& x) {
    if (x.c != 3 || x.h != kInputSize || x.w != kInputSize)
      throw Error(Errc::ShapeMismatch, "identity encoder expects n x 3 x 128 x 128, got " + shape_string(x));
  }
};

// Discriminator on identity features: a 4-layer MLP (64-32-16-1) emitting a
// logit; `scores` applies the sigmoid.
template <typename Scalar>
class PriorDiscriminator {
 public:
  PriorDiscriminator() = default;
  PriorDiscriminator(const IdentityAgentConfig& cfg, Rng& rng) : z_dim_(cfg.z_dim) {
    using namespace nn;
    const Index widths[] = {cfg.z_dim, 64, 32, 16, 1};
    for (int l = 0; l < 4; ++l) {
      net_.template emplace<Linear<Scalar>>(widths[l], widths[l + 1], rng);
      if (l < 3) net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
    }
  }

  Matrix<Scalar> logits(const Matrix<Scalar>& z) const { return net_.forward(features(z)).data; }
  Matrix<Scalar> logits(const Matrix<Scalar>& z, typename nn::Network<Scalar>::Trace& trace) const {
    return net_.forward(features(z), trace).data;
  }
  Matrix<Scalar> scores(const Matrix<Scalar>& z) const { return sigmoid(logits(z)); }

  nn::Network<Scalar>& network() { return net_; }
  const nn::Network<Scalar>& network() const { return net_; }

 private:
  Index z_dim_ = 0;
  nn::Network<Scalar> net_;

  Tensor<Scalar> features(const Matrix<Scalar>& z) const {
    if (z.rows() != z_dim_)
      throw Error(Errc::LengthMismatch, "prior discriminator expects " + std::to_string(z_dim_) + " rows");
    return Tensor<Scalar>::features(z);
  }
};

// z_dim x count matrix of independent Uniform(-1, 1) draws.
template <typename Scalar>
Matrix<Scalar> sample_prior(Index z_dim, Index count, Rng& rng) {
  if (z_dim < 1) throw Error(Errc::InvalidDim, "z_dim must be >= 1");
  Matrix<Scalar> z(z_dim, count);
  for (Index k = 0; k < z.size(); ++k) z.data()[k] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
  return z;
}

// Single prior sample determined entirely by `seed`.
template <typename Scalar>
Vector<Scalar> sample_prior(Index z_dim, std::uint64_t seed) {
  Rng rng(seed);
  return sample_prior<Scalar>(z_dim, 1, rng).col(0);
}

}  // namespace dras
