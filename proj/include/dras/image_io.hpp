#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dras/tensor.hpp"

namespace dras {

// Interleaved 8-bit image, row-major, `channels` values per pixel.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int y, int x, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  std::uint8_t at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
};

// Decoders keep the file's channel count (grey stays 1 channel, RGBA stays 4)
// so callers can reject non-RGB input. Throws DecodeError.
RawImage decode_image(const std::vector<std::uint8_t>& bytes);
RawImage read_image(const std::filesystem::path& path);

// Lossless PNG encoding of an RGB or grey image.
std::vector<std::uint8_t> encode_png(const RawImage& image);
void write_png(const std::filesystem::path& path, const RawImage& image);

// [-1, 1] tensor sample -> 8-bit RGB via round((v + 1) * 127.5), clamped.
RawImage to_raw_image(const Tensor<float>& images, Index sample = 0);

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dras
