#include "dras/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <fstream>
#include <iterator>

#include "dras/error.hpp"

namespace dras {

namespace {

RawImage from_mat(const cv::Mat& m) {
  cv::Mat img = m;
  if (img.depth() != CV_8U) throw Error(Errc::DecodeError, "only 8-bit images are supported");
  if (img.channels() == 3)
    cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  else if (img.channels() == 4)
    cv::cvtColor(img, img, cv::COLOR_BGRA2RGBA);
  RawImage out(img.cols, img.rows, img.channels());
  for (int y = 0; y < img.rows; ++y) {
    const auto* row = img.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::ptrdiff_t>(img.cols) * img.channels(),
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * img.cols * img.channels());
  }
  return out;
}

}  // namespace

RawImage decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw Error(Errc::DecodeError, "empty image buffer");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error(Errc::DecodeError, "could not decode image");
  return from_mat(m);
}

RawImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::DecodeError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  if (image.channels != 1 && image.channels != 3)
    throw Error(Errc::NonRGBInput, "PNG export expects 1 or 3 channels");
  cv::Mat m(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1,
            const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  if (image.channels == 3)
    cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
  else
    bgr = m;
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw Error(Errc::IoError, "PNG encoding failed");
  return out;
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

RawImage to_raw_image(const Tensor<float>& images, Index sample) {
  RawImage out(static_cast<int>(images.w), static_cast<int>(images.h), static_cast<int>(images.c));
  for (Index y = 0; y < images.h; ++y)
    for (Index x = 0; x < images.w; ++x)
      for (Index ch = 0; ch < images.c; ++ch) {
        const double v = std::round((static_cast<double>(images.at(sample, ch, y, x)) + 1.0) * 127.5);
        out.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(ch)) =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dras
