#pragma once

// Flat key -> array parameter container.
//
// Layout (little-endian):
//   "DRASPB01"                         8-byte magic
//   u32 count
//   count x { u32 key_len, key bytes, u64 rows, u64 cols, rows*cols f32 (column-major) }
//
// Network parameters use keys "<prefix><layer>.<kind>.<name>", e.g.
// "e_a.0.conv.weight". Convolution weights are out x (ky, kx, in) with the
// input channel fastest; transposed convolutions are in x (ky, kx, out).

#include <filesystem>
#include <map>
#include <string>

#include "dras/nn/network.hpp"

namespace dras {

struct ParamBlob {
  std::map<std::string, Matrix<float>> arrays;
};

void write_blob(const std::filesystem::path& path, const ParamBlob& blob);
ParamBlob read_blob(const std::filesystem::path& path);

template <typename Scalar>
void export_network(const nn::Network<Scalar>& net, const std::string& prefix, ParamBlob& blob) {
  for (const auto& [key, p] : net.named_parameters()) blob.arrays[prefix + key] = p->template cast<float>();
}

// Copies every parameter of `net` from `blob`. Throws CorruptCheckpoint on a
// missing key or shape mismatch. Layers below `first_layer` only.
template <typename Scalar>
void import_network(nn::Network<Scalar>& net, const std::string& prefix, const ParamBlob& blob,
                    std::size_t first_layer = 0, std::size_t last_layer = static_cast<std::size_t>(-1)) {
  for (auto& [key, p] : net.named_parameters()) {
    const auto layer = static_cast<std::size_t>(std::stoul(key.substr(0, key.find('.'))));
    if (layer < first_layer || layer >= last_layer) continue;
    const auto it = blob.arrays.find(prefix + key);
    if (it == blob.arrays.end()) throw Error(Errc::CorruptCheckpoint, "missing parameter " + prefix + key);
    if (it->second.rows() != p->rows() || it->second.cols() != p->cols())
      throw Error(Errc::CorruptCheckpoint, "shape mismatch for " + prefix + key);
    *p = it->second.template cast<Scalar>();
  }
}

}  // namespace dras
