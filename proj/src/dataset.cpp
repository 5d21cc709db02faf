#include "dras/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dras/csv.hpp"
#include "dras/error.hpp"
#include "dras/rng.hpp"

namespace dras {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

namespace {

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  if (s.empty()) return std::nullopt;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

constexpr std::array<int, kAgeGroups> kGroupUpper = {5, 10, 15, 20, 30, 40, 50, 60, 70, 0};
constexpr std::array<std::string_view, kAgeGroups> kGroupLabels = {"0-5",   "6-10",  "11-15", "16-20", "21-30",
                                                                   "31-40", "41-50", "51-60", "61-70", "70+"};

}  // namespace

UtkFields parse_utkface_name(std::string_view filename) {
  const auto slash = filename.find_last_of("/\\");
  if (slash != std::string_view::npos) filename.remove_prefix(slash + 1);
  std::array<int, 3> fields{};
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    const auto end = filename.find_first_of("_.", pos);
    if (end == std::string_view::npos || (k < 2 && filename[end] != '_'))
      throw Error(Errc::MalformedFilename, "expected [age]_[gender]_[race]_...: '" + std::string(filename) + "'");
    const auto v = parse_int(filename.substr(pos, end - pos));
    if (!v || *v < 0)
      throw Error(Errc::MalformedFilename, "non-integer field in '" + std::string(filename) + "'");
    fields[k] = *v;
    pos = end + 1;
  }
  return {fields[0], fields[1], fields[2]};
}

int assign_age_group(int age) {
  if (age < 0) throw Error(Errc::NegativeAge, "age " + std::to_string(age));
  for (int g = 0; g < kAgeGroups - 1; ++g)
    if (age <= kGroupUpper[g]) return g;
  return kAgeGroups - 1;
}

std::string_view age_group_label(int group) {
  if (group < 0 || group >= kAgeGroups) throw Error(Errc::InvalidConfig, "age group " + std::to_string(group));
  return kGroupLabels[group];
}

std::vector<ImageRecord> augment(const std::vector<ImageRecord>& records, const AugmentConfig& cfg) {
  std::vector<ImageRecord> out = records;
  for (const auto& r : records) {
    if (!cfg.flip_groups.contains(r.age_group)) continue;
    ImageRecord copy = r;
    copy.flipped = !r.flipped;
    out.push_back(std::move(copy));
  }
  return out;
}

SplitResult split(const std::vector<ImageRecord>& records, std::uint64_t seed) {
  if (records.size() < 10)
    throw Error(Errc::TooFewRecords, "need at least 10 records, got " + std::to_string(records.size()));
  Rng rng(seed);
  const auto order = rng.permutation(records.size());
  const std::size_t n_val = records.size() / 10;
  const std::size_t n_test = records.size() / 10;
  const std::size_t n_train = records.size() - n_val - n_test;
  SplitResult out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    ImageRecord r = records[order[k]];
    if (k < n_train) {
      r.split = Split::Train;
      out.train.push_back(std::move(r));
    } else if (k < n_train + n_val) {
      r.split = Split::Val;
      out.val.push_back(std::move(r));
    } else {
      r.split = Split::Test;
      out.test.push_back(std::move(r));
    }
  }
  return out;
}

PreprocessedImage preprocess(const RawImage& image, int target, const PreprocessOptions& opt) {
  if (target != 128 && target != 224)
    throw Error(Errc::ShapeMismatch, "preprocess target must be 128 or 224, got " + std::to_string(target));
  if (image.channels != 3)
    throw Error(Errc::NonRGBInput, "expected 3 channels, got " + std::to_string(image.channels));
  if (image.width <= 0 || image.height <= 0) throw Error(Errc::DecodeError, "empty image");

  int x0 = 0, y0 = 0, side_w = image.width, side_h = image.height;
  if (opt.center_crop) {
    const int side = std::min(image.width, image.height);
    x0 = (image.width - side) / 2;
    y0 = (image.height - side) / 2;
    side_w = side_h = side;
  }
  Tensor<double> src(1, 3, side_h, side_w);
  for (int y = 0; y < side_h; ++y)
    for (int x = 0; x < side_w; ++x) {
      const int sx = opt.flip ? x0 + side_w - 1 - x : x0 + x;
      for (int ch = 0; ch < 3; ++ch) src.at(0, ch, y, x) = image.at(y0 + y, sx, ch);
    }
  Tensor<double> resized = (side_h == target && side_w == target) ? src : resize_bilinear(src, target, target);
  resized.data = (resized.data.array() / 127.5 - 1.0).cwiseMax(-1.0).cwiseMin(1.0);
  return {resized.cast<float>()};
}

PreprocessedImage load_preprocessed(const fs::path& path, int target, const PreprocessOptions& opt) {
  return preprocess(read_image(path), target, opt);
}

// --- ingestion ---------------------------------------------------------------

IngestResult ingest_utkface_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  IngestResult out;
  for (const auto& f : files) {
    try {
      const auto fields = parse_utkface_name(f.filename().string());
      ImageRecord r;
      r.path = f;
      r.age = fields.age;
      r.age_group = assign_age_group(fields.age);
      out.records.push_back(std::move(r));
    } catch (const Error& e) {
      out.rejected.push_back({f.string(), e.what()});
    }
  }
  return out;
}

IngestResult ingest_cacd_csv(const fs::path& csv_path, const fs::path& base_dir) {
  std::ifstream in(csv_path);
  if (!in) throw Error(Errc::IoError, "cannot open " + csv_path.string());
  IngestResult out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = csv::split_row(line);
  const std::vector<std::string> expected{"path", "identity", "age", "rank"};
  if (header != expected) throw Error(Errc::IoError, "CACD CSV header must be path,identity,age,rank");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cols = csv::split_row(line);
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    if (cols.size() != 4) {
      out.rejected.push_back({where, "expected 4 columns"});
      continue;
    }
    const auto age = parse_int(cols[2]);
    const auto rank = parse_int(cols[3]);
    if (!age || *age < 0) {
      out.rejected.push_back({where, "bad age '" + cols[2] + "'"});
      continue;
    }
    if (!rank || *rank < 1) {
      out.rejected.push_back({where, "bad rank '" + cols[3] + "'"});
      continue;
    }
    if (*rank > kMaxCacdRank) {
      ++out.excluded_by_rank;
      continue;
    }
    ImageRecord r;
    r.path = fs::path(cols[0]).is_absolute() ? fs::path(cols[0]) : base_dir / cols[0];
    r.identity = cols[1];
    r.age = *age;
    r.rank = *rank;
    r.age_group = assign_age_group(*age);
    out.records.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ImageRecord>& records) {
  std::ostringstream os;
  os << "path,age,age_group,identity,flipped\n";
  for (const auto& r : records)
    os << csv::escape(r.path.string()) << ',' << r.age << ',' << r.age_group << ','
       << csv::escape(r.identity.value_or("")) << ',' << (r.flipped ? 1 : 0) << '\n';
  write_file_atomic(path, os.str());
}

std::vector<ImageRecord> read_manifest(const fs::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open manifest " + path.string());
  std::string line;
  std::getline(in, line);
  if (csv::split_row(line) != std::vector<std::string>{"path", "age", "age_group", "identity", "flipped"})
    throw Error(Errc::IoError, "bad manifest header in " + path.string());
  std::vector<ImageRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = csv::split_row(line);
    const auto age = cols.size() == 5 ? parse_int(cols[1]) : std::nullopt;
    const auto group = cols.size() == 5 ? parse_int(cols[2]) : std::nullopt;
    if (!age || !group) throw Error(Errc::IoError, "malformed manifest row in " + path.string() + ": " + line);
    ImageRecord r;
    r.path = cols[0];
    r.age = *age;
    r.age_group = *group;
    if (!cols[3].empty()) r.identity = cols[3];
    r.flipped = cols[4] == "1";
    r.split = split;
    out.push_back(std::move(r));
  }
  return out;
}

std::array<std::size_t, kAgeGroups> group_histogram(const std::vector<ImageRecord>& records) {
  std::array<std::size_t, kAgeGroups> h{};
  for (const auto& r : records) ++h.at(static_cast<std::size_t>(r.age_group));
  return h;
}

void write_histogram(const fs::path& path, const std::vector<ImageRecord>& records) {
  const auto h = group_histogram(records);
  std::ostringstream os;
  os << "age_group,label,count\n";
  for (int g = 0; g < kAgeGroups; ++g) os << g << ',' << kGroupLabels[g] << ',' << h[g] << '\n';
  write_file_atomic(path, os.str());
}

// --- image sets --------------------------------------------------------------

Tensor<float> ImageSet::identity_batch(const std::vector<std::size_t>& idx) const {
  std::vector<Tensor<float>> parts;
  parts.reserve(idx.size());
  for (auto i : idx) parts.push_back(identity_view.at(i));
  return stack(parts);
}

Tensor<float> ImageSet::age_batch(const std::vector<std::size_t>& idx) const {
  std::vector<Tensor<float>> parts;
  parts.reserve(idx.size());
  for (auto i : idx) parts.push_back(age_view.at(i));
  return stack(parts);
}

namespace {

std::uint64_t cache_key(const ImageRecord& r, int size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  std::error_code ec;
  const auto abs = fs::absolute(r.path, ec);
  mix(abs.string());
  mix("|" + std::to_string(size) + "|" + (r.flipped ? "f" : "n"));
  const auto bytes = fs::file_size(r.path, ec);
  mix("|" + std::to_string(ec ? 0 : bytes));
  const auto mtime = fs::last_write_time(r.path, ec);
  mix("|" + std::to_string(ec ? 0 : mtime.time_since_epoch().count()));
  return h;
}

std::optional<Tensor<float>> cache_load(const fs::path& file, int size) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  Tensor<float> t(1, 3, size, size);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!in || in.peek() != std::char_traits<char>::eof()) return std::nullopt;
  return t;
}

Tensor<float> load_view(const ImageRecord& r, const RawImage& raw, int size,
                        const std::optional<fs::path>& cache_dir) {
  fs::path file;
  if (cache_dir) {
    char name[32];
    std::snprintf(name, sizeof name, "%016llx.f32", static_cast<unsigned long long>(cache_key(r, size)));
    file = *cache_dir / name;
    if (auto hit = cache_load(file, size)) return *hit;
  }
  PreprocessOptions opt;
  opt.flip = r.flipped;
  auto img = preprocess(raw, size, opt).pixels;
  if (cache_dir) {
    write_file_atomic(file, std::string(reinterpret_cast<const char*>(img.data.data()),
                                        static_cast<std::size_t>(img.data.size()) * sizeof(float)));
  }
  return img;
}

}  // namespace

ImageSet load_image_set(const std::vector<ImageRecord>& records, const std::optional<fs::path>& cache_dir) {
  ImageSet set;
  set.records = records;
  for (const auto& r : records) {
    const RawImage raw = read_image(r.path);
    set.identity_view.push_back(load_view(r, raw, 128, cache_dir));
    set.age_view.push_back(load_view(r, raw, 224, cache_dir));
  }
  return set;
}

ImageSet make_image_set(std::vector<ImageRecord> records, const std::vector<RawImage>& images) {
  if (records.size() != images.size()) throw Error(Errc::LengthMismatch, "records/images size mismatch");
  ImageSet set;
  set.records = std::move(records);
  for (std::size_t i = 0; i < images.size(); ++i) {
    PreprocessOptions opt;
    opt.flip = set.records[i].flipped;
    set.identity_view.push_back(preprocess(images[i], 128, opt).pixels);
    set.age_view.push_back(preprocess(images[i], 224, opt).pixels);
  }
  return set;
}

std::optional<fs::path> cache_dir_from_env() {
  const char* v = std::getenv("DRAS_CACHE");
  if (!v || !*v) return std::nullopt;
  return fs::path(v);
}

// --- toy faces -----------------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

void blend(RawImage& img, int y, int x, const Rgb& c, double alpha) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
  const double v[3] = {c.r, c.g, c.b};
  for (int ch = 0; ch < 3; ++ch) {
    const double cur = img.at(y, x, ch);
    img.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(cur + alpha * (v[ch] - cur), 0.0, 255.0)));
  }
}

void fill_ellipse(RawImage& img, double cy, double cx, double ry, double rx, const Rgb& c, double alpha = 1.0) {
  for (int y = static_cast<int>(cy - ry) - 1; y <= static_cast<int>(cy + ry) + 1; ++y)
    for (int x = static_cast<int>(cx - rx) - 1; x <= static_cast<int>(cx + rx) + 1; ++x) {
      const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) blend(img, y, x, c, alpha);
    }
}

}  // namespace

RawImage make_toy_face(int identity, int age, int size) {
  Rng rng(0xFACEULL * 131 + static_cast<std::uint64_t>(identity));
  const double s = size / 128.0;
  const Rgb background{rng.uniform(40, 90), rng.uniform(60, 110), rng.uniform(90, 150)};
  const Rgb skin{rng.uniform(150, 235), rng.uniform(110, 185), rng.uniform(80, 150)};
  const double face_rx = rng.uniform(30, 40), face_ry = rng.uniform(40, 50);
  const double eye_gap = rng.uniform(12, 20);
  const Rgb iris{rng.uniform(20, 120), rng.uniform(20, 120), rng.uniform(20, 120)};
  const Rgb young_hair{rng.uniform(20, 140), rng.uniform(10, 90), rng.uniform(0, 60)};

  // Age drives proportions (children: rounder, larger eyes), greying and wrinkles.
  const double child = std::clamp((12.0 - age) / 12.0, 0.0, 1.0);
  const double grey = std::clamp((age - 35.0) / 40.0, 0.0, 1.0);
  const Rgb hair{young_hair.r + grey * (200 - young_hair.r), young_hair.g + grey * (200 - young_hair.g),
                 young_hair.b + grey * (200 - young_hair.b)};

  RawImage img(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = static_cast<double>(y) / size;
      img.at(y, x, 0) = static_cast<std::uint8_t>(background.r * (1 - 0.3 * t));
      img.at(y, x, 1) = static_cast<std::uint8_t>(background.g * (1 - 0.3 * t));
      img.at(y, x, 2) = static_cast<std::uint8_t>(background.b * (1 - 0.3 * t));
    }
  const double cx = 64 * s, cy = 68 * s;
  const double rx = face_rx * (1 + 0.12 * child) * s, ry = face_ry * (1 - 0.1 * child) * s;
  fill_ellipse(img, cy - ry * 0.55, cx, ry * 0.75, rx * 1.1, hair);
  fill_ellipse(img, cy, cx, ry, rx, skin);
  const double eye_y = cy - ry * (0.15 - 0.1 * child);
  const double eye_r = (4.0 + 2.5 * child) * s;
  for (int side : {-1, 1}) {
    fill_ellipse(img, eye_y, cx + side * eye_gap * s * (1 - 0.15 * child), eye_r, eye_r * 1.4, {245, 245, 245});
    fill_ellipse(img, eye_y, cx + side * eye_gap * s * (1 - 0.15 * child), eye_r * 0.6, eye_r * 0.6, iris);
  }
  fill_ellipse(img, cy + ry * 0.45, cx, 3.0 * s, rx * 0.35, {150, 40, 50});
  // Wrinkles: forehead and cheek lines whose contrast grows with age.
  const double wrinkle = std::clamp((age - 30.0) / 50.0, 0.0, 1.0) * 0.6;
  if (wrinkle > 0) {
    const Rgb line{skin.r * 0.55, skin.g * 0.55, skin.b * 0.55};
    for (int k = 0; k < 3; ++k) {
      const int y = static_cast<int>(cy - ry * (0.45 + 0.1 * k));
      for (int x = static_cast<int>(cx - rx * 0.5); x <= static_cast<int>(cx + rx * 0.5); ++x) blend(img, y, x, line, wrinkle);
    }
    for (int side : {-1, 1})
      for (int k = 0; k < static_cast<int>(10 * s); ++k)
        blend(img, static_cast<int>(cy + ry * 0.2 + k), static_cast<int>(cx + side * (rx * 0.45 + k * 0.4)), line, wrinkle);
  }
  return img;
}

std::vector<fs::path> write_toy_corpus(const fs::path& dir, int identities, const std::vector<int>& ages, int size) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  std::ostringstream cacd;
  cacd << "path,identity,age,rank\n";
  for (int id = 0; id < identities; ++id)
    for (std::size_t k = 0; k < ages.size(); ++k) {
      const int age = ages[k];
      const std::string name = std::to_string(age) + "_" + std::to_string(id % 2) + "_" + std::to_string(id % 5) +
                               "_" + std::to_string(20170000 + id * 100 + static_cast<int>(k)) + ".png";
      write_png(dir / name, make_toy_face(id, age, size));
      cacd << name << ",id" << id << ',' << age << ",1\n";
      out.push_back(dir / name);
    }
  write_file_atomic(dir / "identities.csv", cacd.str());
  return out;
}

}  // namespace dras
