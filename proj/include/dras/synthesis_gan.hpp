#pragma once

#include <utility>

#include "dras/losses.hpp"
#include "dras/nn/network.hpp"
#include "dras/scale.hpp"

namespace dras {

// Concatenate identity (top) and age (bottom) features column-wise.
template <typename A, typename B>
Matrix<typename A::Scalar> compose_joint_feature(const Eigen::MatrixBase<A>& z_id, const Eigen::MatrixBase<B>& z_age) {
  if (z_id.rows() < 1) throw Error(Errc::InvalidComponent, "empty identity feature");
  if (z_age.rows() != kAgeFeatureDim)
    throw Error(Errc::InvalidComponent, "age feature must have 50 rows, got " + std::to_string(z_age.rows()));
  if (z_id.cols() != z_age.cols()) throw Error(Errc::InvalidComponent, "identity/age batch sizes differ");
  if (!z_id.allFinite() || !z_age.allFinite()) throw Error(Errc::InvalidComponent, "non-finite feature");
  Matrix<typename A::Scalar> joint(z_id.rows() + z_age.rows(), z_id.cols());
  joint << z_id, z_age;
  return joint;
}

// Inverse of compose_joint_feature.
template <typename D>
std::pair<Matrix<typename D::Scalar>, Matrix<typename D::Scalar>> split_joint_feature(
    const Eigen::MatrixBase<D>& joint, Index z_dim) {
  if (joint.rows() != z_dim + kAgeFeatureDim)
    throw Error(Errc::LengthMismatch, "joint feature has " + std::to_string(joint.rows()) + " rows");
  return {joint.topRows(z_dim), joint.bottomRows(kAgeFeatureDim)};
}

struct GanConfig {
  Scale scale = Scale::Desk;
  Index z_dim = 50;
};

// FC -> 8x8 grid -> four 2x upsampling transposed convolutions -> tanh.
// paper: 1024-channel seed, 5x5 kernels, 512/256/128/64 filters then a
// stride-1 projection to RGB; desk: 32-channel seed, 4x4 kernels.
template <typename Scalar>
class Generator {
 public:
  static constexpr Index kOutputSize = 128;

  Generator() = default;
  Generator(const GanConfig& cfg, Rng& rng) : joint_dim_(cfg.z_dim + kAgeFeatureDim) {
    using namespace nn;
    if (cfg.scale == Scale::Paper) {
      net_.template emplace<Linear<Scalar>>(joint_dim_, 8 * 8 * 1024, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      net_.template emplace<Unflatten<Scalar>>(1024, 8, 8);
      const Index widths[] = {1024, 512, 256, 128, 64};
      for (int b = 0; b < 4; ++b) {
        net_.template emplace<ConvTranspose2d<Scalar>>(widths[b], widths[b + 1], 5, 2, 2, 1, rng);
        net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      }
      net_.template emplace<ConvTranspose2d<Scalar>>(64, 3, 5, 1, 2, 0, rng);
    } else {
      net_.template emplace<Linear<Scalar>>(joint_dim_, 8 * 8 * 32, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      net_.template emplace<Unflatten<Scalar>>(32, 8, 8);
      const Index widths[] = {32, 32, 16, 8, 3};
      for (int b = 0; b < 4; ++b) {
        net_.template emplace<ConvTranspose2d<Scalar>>(widths[b], widths[b + 1], 4, 2, 1, 0, rng);
        if (b < 3) net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      }
    }
    net_.template emplace<Pointwise<Scalar>>(Activation::Tanh);
  }

  Index joint_dim() const { return joint_dim_; }

  // joint: (z_dim + 50) x n  ->  n x 3 x 128 x 128 in [-1, 1].
  Tensor<Scalar> generate(const Matrix<Scalar>& joint) const { return net_.forward(input(joint)); }
  Tensor<Scalar> generate(const Matrix<Scalar>& joint, typename nn::Network<Scalar>::Trace& trace) const {
    return net_.forward(input(joint), trace);
  }

  nn::Network<Scalar>& network() { return net_; }
  const nn::Network<Scalar>& network() const { return net_; }

 private:
  Index joint_dim_ = 0;
  nn::Network<Scalar> net_;

  Tensor<Scalar> input(const Matrix<Scalar>& joint) const {
    if (joint.rows() != joint_dim_)
      throw Error(Errc::LengthMismatch, "generator expects joint features with " + std::to_string(joint_dim_) +
                                            " rows, got " + std::to_string(joint.rows()));
    return Tensor<Scalar>::features(joint);
  }
};

// Unconditional image discriminator emitting one logit per image.
// paper: 5x5 convolutions 16/32/64/128 -> FC-1024 -> FC-1; desk: 4x4 convs
// 8/16/32/32 -> FC-1. Leaky ReLU throughout.
template <typename Scalar>
class ImageDiscriminator {
 public:
  static constexpr Index kInputSize = 128;

  ImageDiscriminator() = default;
  ImageDiscriminator(const GanConfig& cfg, Rng& rng) {
    using namespace nn;
    const bool paper = cfg.scale == Scale::Paper;
    const Index k = paper ? 5 : 4;
    const Index pad = paper ? 2 : 1;
    const Index widths[] = {3, paper ? 16 : 8, paper ? 32 : 16, paper ? 64 : 32, paper ? 128 : 32};
    for (int b = 0; b < 4; ++b) {
      net_.template emplace<Conv2d<Scalar>>(widths[b], widths[b + 1], k, 2, pad, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::LeakyRelu);
    }
    net_.template emplace<Flatten<Scalar>>();
    if (paper) {
      net_.template emplace<Linear<Scalar>>(8 * 8 * widths[4], 1024, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::LeakyRelu);
      net_.template emplace<Linear<Scalar>>(1024, 1, rng);
    } else {
      net_.template emplace<Linear<Scalar>>(8 * 8 * widths[4], 1, rng);
    }
  }

  // 1 x n logits.
  Matrix<Scalar> logits(const Tensor<Scalar>& images) const {
    check(images);
    return net_.forward(images).data;
  }
  Matrix<Scalar> logits(const Tensor<Scalar>& images, typename nn::Network<Scalar>::Trace& trace) const {
    check(images);
    return net_.forward(images, trace).data;
  }

  // 1 x n probabilities in (0, 1).
  Matrix<Scalar> discriminate(const Tensor<Scalar>& images) const { return sigmoid(logits(images)); }

  nn::Network<Scalar>& network() { return net_; }
  const nn::Network<Scalar>& network() const { return net_; }

 private:
  nn::Network<Scalar> net_;

  static void check(const Tensor<Scalar>& x) {
    if (x.c != 3 || x.h != kInputSize || x.w != kInputSize)
      throw Error(Errc::ShapeMismatch, "image discriminator expects n x 3 x 128 x 128, got " + shape_string(x));
  }
};

}  // namespace dras
