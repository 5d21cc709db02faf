#include "dras/model.hpp"

namespace dras {

DrasModel::DrasModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng root(seed);
  Rng r_ei = root.fork(1), r_ea = root.fork(2), r_di = root.fork(3), r_g = root.fork(4), r_d = root.fork(5);
  e_i = IdentityEncoder<float>(IdentityAgentConfig{cfg.scale, cfg.z_dim}, r_ei);
  e_a = AgeEncoder<float>(AgeEncoderConfig{cfg.scale, cfg.age_backbone_frozen}, r_ea);
  d_i = PriorDiscriminator<float>(IdentityAgentConfig{cfg.scale, cfg.z_dim}, r_di);
  g = Generator<float>(GanConfig{cfg.scale, cfg.z_dim}, r_g);
  d = ImageDiscriminator<float>(GanConfig{cfg.scale, cfg.z_dim}, r_d);
}

Tensor<float> DrasModel::synthesize(const Tensor<float>& id128, const Tensor<float>& age224) const {
  if (id128.n != age224.n) throw Error(Errc::ShapeMismatch, "identity/age reference counts differ");
  return g.generate(compose_joint_feature(e_i.encode(id128), e_a.encode(age224)));
}

ParamBlob DrasModel::export_parameters() const {
  ParamBlob blob;
  export_network(e_i.network(), "e_i.", blob);
  export_network(e_a.network(), "e_a.", blob);
  export_network(d_i.network(), "d_i.", blob);
  export_network(g.network(), "g.", blob);
  export_network(d.network(), "d.", blob);
  return blob;
}

void DrasModel::import_parameters(const ParamBlob& blob) {
  import_network(e_i.network(), "e_i.", blob);
  import_network(e_a.network(), "e_a.", blob);
  import_network(d_i.network(), "d_i.", blob);
  import_network(g.network(), "g.", blob);
  import_network(d.network(), "d.", blob);
}

void DrasModel::import_age_backbone(const ParamBlob& blob) {
  import_network(e_a.network(), "e_a.", blob, 0, e_a.head_begin());
}

Tensor<float> to_age_resolution(const Tensor<float>& images128) {
  return resize_bilinear(images128, AgeEncoder<float>::kInputSize, AgeEncoder<float>::kInputSize);
}

Tensor<float> from_age_resolution_grad(const Tensor<float>& grad224) {
  return resize_bilinear_backward(grad224, Generator<float>::kOutputSize, Generator<float>::kOutputSize);
}

}  // namespace dras
