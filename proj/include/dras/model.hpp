#pragma once

#include <cstdint>
#include <filesystem>

#include "dras/age_agent.hpp"
#include "dras/identity_agent.hpp"
#include "dras/param_blob.hpp"
#include "dras/synthesis_gan.hpp"

namespace dras {

struct ModelConfig {
  Scale scale = Scale::Desk;
  Index z_dim = 50;
  bool age_backbone_frozen = true;
};

// The five networks of the framework: identity encoder, age encoder, prior
// discriminator, generator and image discriminator.
class DrasModel {
 public:
  DrasModel() = default;
  DrasModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  IdentityEncoder<float> e_i;
  AgeEncoder<float> e_a;
  PriorDiscriminator<float> d_i;
  Generator<float> g;
  ImageDiscriminator<float> d;

  // id128: n x 3 x 128 x 128 identity references; age224: n x 3 x 224 x 224
  // age references. Returns n synthesized 128 x 128 images.
  Tensor<float> synthesize(const Tensor<float>& id128, const Tensor<float>& age224) const;

  // Checksums used to prove which networks an optimization stage touched.
  std::uint64_t checksum_e_i() const { return e_i.network().checksum(); }
  std::uint64_t checksum_e_a() const { return e_a.network().checksum(); }
  std::uint64_t checksum_d_i() const { return d_i.network().checksum(); }
  std::uint64_t checksum_g() const { return g.network().checksum(); }
  std::uint64_t checksum_d() const { return d.network().checksum(); }

  ParamBlob export_parameters() const;
  void import_parameters(const ParamBlob& blob);

  // Loads only the age backbone (the layers below the head) from an external
  // blob using the "e_a." key prefix.
  void import_age_backbone(const ParamBlob& blob);

 private:
  ModelConfig cfg_{};
};

// Resize a batch of generated 128 x 128 images to the age encoder's 224 x 224
// input, and its adjoint.
Tensor<float> to_age_resolution(const Tensor<float>& images128);
Tensor<float> from_age_resolution_grad(const Tensor<float>& grad224);

}  // namespace dras
