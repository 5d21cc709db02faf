#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dras/image_io.hpp"
#include "dras/scale.hpp"

namespace dras::cli {

inline constexpr int kGridTile = 128;
inline constexpr int kGridGutter = 2;
inline constexpr std::uint8_t kGridBackground = 255;

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct RunManifest {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint_id;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

// Deterministic JSON (no timestamps) including the tool version.
std::string to_json(const RunManifest& m);
void write_run_manifest(const std::filesystem::path& path, const RunManifest& m);

// "<stage dir>/<epoch dir>@<hash of params.bin>".
std::string checkpoint_id(const std::filesystem::path& checkpoint_dir);

// Top row: age references; left column: identity references; body: cells
// indexed [row][col]. Tiles are kGridTile square separated by kGridGutter
// pixels, so the image is (cols+1)·tile + cols·gutter wide and
// (rows+1)·tile + rows·gutter tall.
RawImage compose_grid(const std::vector<RawImage>& identity_refs, const std::vector<RawImage>& age_refs,
                      const std::vector<std::vector<RawImage>>& cells);

struct IngestArgs {
  std::filesystem::path dataset_dir;
  std::string format = "utkface";  // utkface | cacd_csv
  std::optional<std::filesystem::path> csv;  // cacd_csv sidecar; defaults to <dataset_dir>/identities.csv
  std::filesystem::path out;
  std::uint64_t seed = 0;
  bool augment = true;
};

// Writes train/val/test manifests, histogram.csv and rejected.csv. Malformed
// records are listed and make the exit code nonzero, but the run completes.
int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<Scale> scale;
  std::string stage = "both";  // 1 | 2 | both
  std::filesystem::path data;  // ingest output directory (train.csv)
  std::optional<std::filesystem::path> checkpoint;  // stage-1 checkpoint for stage 2
  std::filesystem::path out;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct SynthesizeArgs {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> identity_images;
  std::vector<std::filesystem::path> age_images;
  std::filesystem::path out;
};

// Writes grid.png and cell_<row>_<col>.png.
int cmd_synthesize(const SynthesizeArgs& args, std::ostream& out, std::ostream& err);

struct EvaluateArgs {
  std::filesystem::path checkpoint;
  std::string protocol;  // age_acc | id_features | consistency
  std::filesystem::path data;  // ingest output directory (test.csv)
  std::string classifier;  // oracle | random | path to a classifier blob
  std::string client = "local";  // local | http
  std::string http_endpoint;
  std::size_t max_pairs = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);

struct TrainClassifierArgs {
  std::filesystem::path data;  // ingest output directory (train.csv)
  std::filesystem::path out;   // classifier blob path
  int epochs = 10;
  std::uint64_t seed = 0;
};

int cmd_train_classifier(const TrainClassifierArgs& args, std::ostream& out, std::ostream& err);

struct MakeToyArgs {
  std::filesystem::path out;
  int identities = 4;
  std::vector<int> ages{3, 8, 13, 18, 25, 35, 45, 55, 65, 80};
  int size = 128;
};

// Synthetic corpus named like UTKFace plus an identities.csv sidecar.
int cmd_make_toy(const MakeToyArgs& args, std::ostream& out, std::ostream& err);

}  // namespace dras::cli
