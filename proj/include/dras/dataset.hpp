#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dras/image_io.hpp"
#include "dras/tensor.hpp"

namespace dras {

inline constexpr int kAgeGroups = 10;
inline constexpr int kMaxCacdRank = 5;

enum class Split { Unassigned, Train, Val, Test };

std::string_view to_string(Split s);

struct ImageRecord {
  std::filesystem::path path;
  int age = 0;
  std::optional<std::string> identity;
  std::optional<int> rank;
  int age_group = 0;
  Split split = Split::Unassigned;
  bool flipped = false;

  bool operator==(const ImageRecord&) const = default;
};

struct UtkFields {
  int age;
  int gender;
  int race;
};

// "[age]_[gender]_[race]_[date].jpg" -> leading three integers.
UtkFields parse_utkface_name(std::string_view filename);

// Closed integer bins 0-5, 6-10, 11-15, 16-20, 21-30, 31-40, 41-50, 51-60,
// 61-70, 71+.
int assign_age_group(int age);

// "0-5", ..., "70+" as printed in the accuracy tables.
std::string_view age_group_label(int group);

struct AugmentConfig {
  // Groups that receive a mirrored copy (babies, children, seniors).
  std::set<int> flip_groups{0, 1, 8, 9};
};

// Appends a flipped copy of every record whose group is selected; output is
// the input followed by the flips in input order.
std::vector<ImageRecord> augment(const std::vector<ImageRecord>& records, const AugmentConfig& cfg = {});

struct SplitResult {
  std::vector<ImageRecord> train, val, test;
};

// Seeded 80/10/10 partition (val and test get floor(n/10) each).
SplitResult split(const std::vector<ImageRecord>& records, std::uint64_t seed);

// Normalized 3-channel image of side 128 (identity / GAN path) or 224 (age path).
struct PreprocessedImage {
  Tensor<float> pixels;  // 1 x 3 x size x size

  Index size() const { return pixels.h; }
};

struct PreprocessOptions {
  bool center_crop = true;
  bool flip = false;
};

// Centre-crop to a square, bilinear resample to target x target, then
// v / 127.5 - 1. Throws NonRGBInput, ShapeMismatch (unsupported target).
PreprocessedImage preprocess(const RawImage& image, int target, const PreprocessOptions& opt = {});

// Decode + preprocess; DecodeError on unreadable files.
PreprocessedImage load_preprocessed(const std::filesystem::path& path, int target, const PreprocessOptions& opt = {});

// --- corpus ingestion ----------------------------------------------------

struct RejectedRecord {
  std::string source;
  std::string reason;
};

struct IngestResult {
  std::vector<ImageRecord> records;
  std::vector<RejectedRecord> rejected;
  std::size_t excluded_by_rank = 0;
};

// Every *.jpg / *.jpeg / *.png under `dir` (sorted by name) parsed with the
// UTKFace naming convention.
IngestResult ingest_utkface_dir(const std::filesystem::path& dir);

// Sidecar CSV with header `path,identity,age,rank`; relative paths resolve
// against `base_dir`. Rows with rank > 5 are excluded and counted.
IngestResult ingest_cacd_csv(const std::filesystem::path& csv, const std::filesystem::path& base_dir);

// Manifest CSV `path,age,age_group,identity,flipped`.
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path, Split split = Split::Unassigned);

// Per-group counts `age_group,label,count`.
std::array<std::size_t, kAgeGroups> group_histogram(const std::vector<ImageRecord>& records);
void write_histogram(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

// --- in-memory training set ------------------------------------------------

// Every record preprocessed at both resolutions, in record order.
struct ImageSet {
  std::vector<ImageRecord> records;
  std::vector<Tensor<float>> identity_view;  // 1 x 3 x 128 x 128 each
  std::vector<Tensor<float>> age_view;       // 1 x 3 x 224 x 224 each

  std::size_t size() const { return records.size(); }
  Tensor<float> identity_batch(const std::vector<std::size_t>& idx) const;
  Tensor<float> age_batch(const std::vector<std::size_t>& idx) const;
};

// Loads and preprocesses records. When `cache_dir` is set (see DRAS_CACHE),
// preprocessed arrays are memoized on disk keyed by path, size and flip.
ImageSet load_image_set(const std::vector<ImageRecord>& records,
                        const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

ImageSet make_image_set(std::vector<ImageRecord> records, const std::vector<RawImage>& images);

std::optional<std::filesystem::path> cache_dir_from_env();

// --- synthetic faces -------------------------------------------------------

// Procedural face whose geometry and palette depend on `identity` and whose
// hair tone, wrinkles and proportions depend on `age`. Deterministic.
RawImage make_toy_face(int identity, int age, int size = 128);

// Writes identities x ages toy faces as UTKFace-named PNGs into `dir` and
// returns their paths in generation order.
std::vector<std::filesystem::path> write_toy_corpus(const std::filesystem::path& dir, int identities,
                                                    const std::vector<int>& ages, int size = 128);

}  // namespace dras
