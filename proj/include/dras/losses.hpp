#pragma once

// Loss terms of the hybrid objective and their analytic gradients.
//
// Feature losses take column-batched features (dim x batch); the per-pair L2
// distance is averaged over the batch. Adversarial losses take discriminator
// probabilities and average each expectation over its own batch.

#include <cmath>
#include <limits>
#include <string>

#include "dras/error.hpp"
#include "dras/tensor.hpp"

namespace dras {

inline constexpr Index kAgeFeatureDim = 50;

namespace detail {

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(Errc::LengthMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                          std::to_string(b.cols()));
}

template <typename D>
void require_probabilities(const Eigen::MatrixBase<D>& p, const char* what) {
  const Matrix<typename D::Scalar> m = p;
  for (Index k = 0; k < m.size(); ++k) {
    const auto v = m.data()[k];
    if (!(v > 0 && v < 1)) throw Error(Errc::ScoreOutOfRange, std::string(what) + ": score " + std::to_string(v));
  }
}

}  // namespace detail

// ‖ref − syn‖₂ for a single pair of feature vectors.
template <typename A, typename B>
typename A::Scalar l2_distance(const Eigen::MatrixBase<A>& ref, const Eigen::MatrixBase<B>& syn) {
  detail::require_same_size(ref, syn, "l2_distance");
  return (ref - syn).norm();
}

// Mean over columns of ‖ref_b − syn_b‖₂.
template <typename A, typename B>
typename A::Scalar batch_l2_distance(const Eigen::MatrixBase<A>& ref, const Eigen::MatrixBase<B>& syn) {
  detail::require_same_size(ref, syn, "batch_l2_distance");
  using S = typename A::Scalar;
  if (ref.cols() == 0) return S(0);
  return (ref - syn).colwise().norm().sum() / static_cast<S>(ref.cols());
}

// d/d(syn) of batch_l2_distance. Zero where a pair coincides (subgradient).
template <typename A, typename B>
Matrix<typename A::Scalar> batch_l2_distance_grad(const Eigen::MatrixBase<A>& ref, const Eigen::MatrixBase<B>& syn) {
  detail::require_same_size(ref, syn, "batch_l2_distance_grad");
  using S = typename A::Scalar;
  Matrix<S> g = syn - ref;
  for (Index b = 0; b < g.cols(); ++b) {
    const S norm = g.col(b).norm();
    if (norm > S(0))
      g.col(b) /= norm * static_cast<S>(g.cols());
    else
      g.col(b).setZero();
  }
  return g;
}

// Age preservation: distance between 50-dimensional age features.
template <typename A, typename B>
typename A::Scalar age_preservation_loss(const Eigen::MatrixBase<A>& ref, const Eigen::MatrixBase<B>& syn) {
  if (ref.rows() != kAgeFeatureDim || syn.rows() != kAgeFeatureDim)
    throw Error(Errc::LengthMismatch, "age features must have 50 rows, got " + std::to_string(ref.rows()) + " and " +
                                          std::to_string(syn.rows()));
  return batch_l2_distance(ref, syn);
}

// Identity preservation: distance between identity features of equal length.
template <typename A, typename B>
typename A::Scalar identity_preservation_loss(const Eigen::MatrixBase<A>& ref, const Eigen::MatrixBase<B>& syn) {
  return batch_l2_distance(ref, syn);
}

// Mean absolute pixel difference.
template <typename Scalar>
Scalar reconstruction_loss(const Tensor<Scalar>& original, const Tensor<Scalar>& reconstructed) {
  if (!original.same_shape(reconstructed))
    throw Error(Errc::ShapeMismatch,
                "reconstruction_loss: " + shape_string(original) + " vs " + shape_string(reconstructed));
  if (original.size() == 0) return Scalar(0);
  return (original.data - reconstructed.data).cwiseAbs().sum() / static_cast<Scalar>(original.size());
}

// d/d(reconstructed) of reconstruction_loss.
template <typename Scalar>
Tensor<Scalar> reconstruction_loss_grad(const Tensor<Scalar>& original, const Tensor<Scalar>& reconstructed) {
  if (!original.same_shape(reconstructed))
    throw Error(Errc::ShapeMismatch, "reconstruction_loss_grad: shape mismatch");
  Tensor<Scalar> g = reconstructed;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(original.size());
  g.data = (reconstructed.data - original.data).array().sign() * inv;
  return g;
}

template <typename Scalar>
struct AdversarialLoss {
  Scalar discriminator;  // minimized by the discriminator
  Scalar generator;      // minimized by the encoder / generator (non-saturating)
};

// Uniform-prior adversarial loss on the identity feature:
//   discriminator = −(mean log d_real + mean log(1 − d_fake))
//   generator     = −mean log d_fake
template <typename A, typename B>
AdversarialLoss<typename A::Scalar> prior_adversarial_loss(const Eigen::MatrixBase<A>& d_real,
                                                            const Eigen::MatrixBase<B>& d_fake) {
  detail::require_probabilities(d_real, "prior_adversarial_loss(d_real)");
  detail::require_probabilities(d_fake, "prior_adversarial_loss(d_fake)");
  using S = typename A::Scalar;
  const S real = d_real.array().log().mean();
  const S fake = (S(1) - d_fake.array()).log().mean();
  return {-(real + fake), -d_fake.array().log().mean()};
}

// Image adversarial loss with both reference images counted as real:
//   discriminator = −(mean log d_id_ref + mean log d_age_ref + mean log(1 − d_fake))
//   generator     = −mean log d_fake
template <typename A, typename B, typename C>
AdversarialLoss<typename A::Scalar> image_adversarial_loss(const Eigen::MatrixBase<A>& d_id_ref,
                                                            const Eigen::MatrixBase<B>& d_age_ref,
                                                            const Eigen::MatrixBase<C>& d_fake) {
  detail::require_probabilities(d_id_ref, "image_adversarial_loss(d_id_ref)");
  detail::require_probabilities(d_age_ref, "image_adversarial_loss(d_age_ref)");
  detail::require_probabilities(d_fake, "image_adversarial_loss(d_fake)");
  using S = typename A::Scalar;
  const S id = d_id_ref.array().log().mean();
  const S age = d_age_ref.array().log().mean();
  const S fake = (S(1) - d_fake.array()).log().mean();
  return {-(id + age + fake), -d_fake.array().log().mean()};
}

// Gradients of the adversarial losses with respect to the probabilities.
// `real` terms: d/dp of −mean log p. `fake_d`: d/dp of −mean log(1 − p).
// `fake_g`: d/dp of −mean log p.
template <typename D>
Matrix<typename D::Scalar> real_term_grad(const Eigen::MatrixBase<D>& p) {
  using S = typename D::Scalar;
  return (-S(1) / (p.array() * static_cast<S>(p.size()))).matrix();
}

template <typename D>
Matrix<typename D::Scalar> fake_term_grad(const Eigen::MatrixBase<D>& p) {
  using S = typename D::Scalar;
  return (S(1) / ((S(1) - p.array()) * static_cast<S>(p.size()))).matrix();
}

// Chain rule through a sigmoid: d/d(logit) from d/dp, where p = σ(logit).
template <typename G, typename P>
Matrix<typename G::Scalar> through_sigmoid(const Eigen::MatrixBase<G>& dp, const Eigen::MatrixBase<P>& p) {
  using S = typename G::Scalar;
  return (dp.array() * p.array() * (S(1) - p.array())).matrix();
}

template <typename D>
Matrix<typename D::Scalar> sigmoid(const Eigen::MatrixBase<D>& logits) {
  using S = typename D::Scalar;
  // Kept strictly inside (0, 1) so downstream log-losses stay finite.
  const S lo = std::numeric_limits<S>::min();
  const S hi = S(1) - std::numeric_limits<S>::epsilon();
  return (S(1) / (S(1) + (-logits.array()).exp())).max(lo).min(hi).matrix();
}

}  // namespace dras
