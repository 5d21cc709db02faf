#pragma once

#include <cstdint>
#include <utility>

#include "dras/losses.hpp"
#include "dras/nn/network.hpp"
#include "dras/scale.hpp"

namespace dras {

struct AgeEncoderConfig {
  static constexpr Index kHeadHidden = 1024;
  static constexpr Index kHeadOut = kAgeFeatureDim;

  Scale backbone = Scale::Desk;
  bool backbone_frozen = true;
};

// Apparent-age encoder: a convolutional backbone followed by a
// FC-1024 -> FC-50 head with tanh output, so every feature lies in [-1, 1].
//
// paper backbone: VGG-16 convolutions plus its two 4096-wide FC layers (the
// age-estimation network with its classification layer removed).
// desk backbone: four stride-2 conv blocks, 224 -> 14.
template <typename Scalar>
class AgeEncoder {
 public:
  static constexpr Index kInputSize = 224;

  AgeEncoder() = default;
  AgeEncoder(const AgeEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    using namespace nn;
    if (cfg.backbone == Scale::Paper) {
      Index in = 3;
      const int widths[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
      for (int wdt : widths) {
        if (wdt == 0) {
          net_.template emplace<MaxPool2<Scalar>>();
          continue;
        }
        net_.template emplace<Conv2d<Scalar>>(in, wdt, 3, 1, 1, rng);
        net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
        in = wdt;
      }
      net_.template emplace<Flatten<Scalar>>();
      net_.template emplace<Linear<Scalar>>(7 * 7 * 512, 4096, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      net_.template emplace<Linear<Scalar>>(4096, 4096, rng);
      net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      backbone_width_ = 4096;
    } else {
      const Index widths[] = {3, 8, 16, 16, 16};
      for (int b = 0; b < 4; ++b) {
        net_.template emplace<Conv2d<Scalar>>(widths[b], widths[b + 1], 4, 2, 1, rng);
        net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
      }
      net_.template emplace<Flatten<Scalar>>();
      backbone_width_ = 14 * 14 * 16;
    }
    head_begin_ = net_.depth();
    net_.template emplace<Linear<Scalar>>(backbone_width_, AgeEncoderConfig::kHeadHidden, rng);
    net_.template emplace<Pointwise<Scalar>>(Activation::Relu);
    net_.template emplace<Linear<Scalar>>(AgeEncoderConfig::kHeadHidden, AgeEncoderConfig::kHeadOut, rng);
    net_.template emplace<Pointwise<Scalar>>(Activation::Tanh);
    net_.freeze_below(cfg.backbone_frozen ? head_begin_ : 0);
  }

  const AgeEncoderConfig& config() const { return cfg_; }

  // images: n x 3 x 224 x 224 in [-1, 1]  ->  50 x n features.
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

  std::size_t head_begin() const { return head_begin_; }
  std::uint64_t backbone_checksum() const { return net_.checksum(0, head_begin_); }
  std::uint64_t head_checksum() const { return net_.checksum(head_begin_); }

 private:
  AgeEncoderConfig cfg_{};
  nn::Network<Scalar> net_;
  std::size_t head_begin_ = 0;
  Index backbone_width_ = 0;

  static void check(const Tensor<Scalar>& x) {
    if (x.c != 3 || x.h != kInputSize || x.w != kInputSize)
      throw Error(Errc::ShapeMismatch, "age encoder expects n x 3 x 224 x 224, got " + shape_string(x));
  }
};

}  // namespace dras
