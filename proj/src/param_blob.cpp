#include "dras/param_blob.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dras/image_io.hpp"

namespace dras {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'A', 'S', 'P', 'B', '0', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(Errc::CorruptCheckpoint, "truncated parameter blob");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const ParamBlob& blob) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.arrays.size()));
  for (const auto& [key, m] : blob.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  write_file_atomic(path, out);
}

ParamBlob read_blob(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::CorruptCheckpoint, "cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
    throw Error(Errc::CorruptCheckpoint, "bad magic in " + path.string());
  std::size_t pos = sizeof kMagic;
  ParamBlob blob;
  const auto count = take<std::uint32_t>(in, pos);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = take<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw Error(Errc::CorruptCheckpoint, "truncated key");
    std::string key = in.substr(pos, len);
    pos += len;
    const auto rows = take<std::uint64_t>(in, pos);
    const auto cols = take<std::uint64_t>(in, pos);
    const std::size_t bytes = rows * cols * sizeof(float);
    if (pos + bytes > in.size()) throw Error(Errc::CorruptCheckpoint, "truncated array " + key);
    Matrix<float> m(static_cast<Index>(rows), static_cast<Index>(cols));
    std::memcpy(m.data(), in.data() + pos, bytes);
    pos += bytes;
    blob.arrays.emplace(std::move(key), std::move(m));
  }
  if (pos != in.size()) throw Error(Errc::CorruptCheckpoint, "trailing bytes in " + path.string());
  return blob;
}

}  // namespace dras
