#include "dras/cli.hpp"

#include <fstream>
#include <iterator>
#include <ostream>

#include <json.hpp>

#include "dras/csv.hpp"
#include "dras/dataset.hpp"
#include "dras/error.hpp"
#include "dras/evaluation.hpp"
#include "dras/trainer.hpp"
#include "dras/version.hpp"

namespace dras::cli {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == Errc::UsageError ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a_bytes(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

ImageSet load_split(const fs::path& data_dir, const std::string& name, Split split) {
  const fs::path manifest = data_dir / (name + ".csv");
  if (!fs::exists(manifest)) throw Error(Errc::IoError, "missing manifest " + manifest.string());
  return load_image_set(read_manifest(manifest, split), cache_dir_from_env());
}

}  // namespace

std::string to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path ? nlohmann::ordered_json(*m.config_path) : nlohmann::ordered_json();
  j["seed"] = m.seed ? nlohmann::ordered_json(*m.seed) : nlohmann::ordered_json();
  j["checkpoint_id"] = m.checkpoint_id ? nlohmann::ordered_json(*m.checkpoint_id) : nlohmann::ordered_json();
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["tool_version"] = kVersion;
  return j.dump(2) + "\n";
}

void write_run_manifest(const fs::path& path, const RunManifest& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, to_json(m));
}

std::string checkpoint_id(const fs::path& dir) {
  std::ifstream f(dir / "params.bin", std::ios::binary);
  if (!f) throw Error(Errc::CorruptCheckpoint, "missing params.bin in " + dir.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return (dir.parent_path().filename() / dir.filename()).generic_string() + "@" + hex(fnv1a_bytes(bytes));
}

RawImage compose_grid(const std::vector<RawImage>& identity_refs, const std::vector<RawImage>& age_refs,
                      const std::vector<std::vector<RawImage>>& cells) {
  const int rows = static_cast<int>(identity_refs.size());
  const int cols = static_cast<int>(age_refs.size());
  if (rows == 0 || cols == 0) throw Error(Errc::UsageError, "grid needs at least one identity and one age reference");
  if (static_cast<int>(cells.size()) != rows) throw Error(Errc::ShapeMismatch, "one cell row per identity required");
  for (const auto& row : cells)
    if (static_cast<int>(row.size()) != cols) throw Error(Errc::ShapeMismatch, "one cell per age reference required");
  constexpr int pitch = kGridTile + kGridGutter;
  RawImage grid((cols + 1) * kGridTile + cols * kGridGutter, (rows + 1) * kGridTile + rows * kGridGutter, 3);
  std::fill(grid.pixels.begin(), grid.pixels.end(), kGridBackground);
  auto place = [&](const RawImage& tile, int r, int c) {
    if (tile.width != kGridTile || tile.height != kGridTile || tile.channels != 3)
      throw Error(Errc::ShapeMismatch, "grid tiles must be 128 x 128 RGB");
    for (int y = 0; y < kGridTile; ++y)
      for (int x = 0; x < kGridTile; ++x)
        for (int ch = 0; ch < 3; ++ch) grid.at(r * pitch + y, c * pitch + x, ch) = tile.at(y, x, ch);
  };
  for (int c = 0; c < cols; ++c) place(age_refs[static_cast<std::size_t>(c)], 0, c + 1);
  for (int r = 0; r < rows; ++r) {
    place(identity_refs[static_cast<std::size_t>(r)], r + 1, 0);
    for (int c = 0; c < cols; ++c)
      place(cells[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)], r + 1, c + 1);
  }
  return grid;
}

// --- ingest --------------------------------------------------------------------------

int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.format != "utkface" && args.format != "cacd_csv")
      throw Error(Errc::UsageError, "format must be utkface or cacd_csv");
    if (!fs::is_directory(args.dataset_dir)) throw Error(Errc::IoError, "no such directory " + args.dataset_dir.string());
    const fs::path sidecar = args.csv.value_or(args.dataset_dir / "identities.csv");

    RunManifest m{"ingest", std::nullopt, args.seed, std::nullopt, {args.dataset_dir.string()}, {}};
    if (args.format == "cacd_csv") m.inputs.push_back(sidecar.string());
    for (const char* name : {"train.csv", "val.csv", "test.csv", "histogram.csv", "rejected.csv"})
      m.outputs.push_back((args.out / name).string());
    write_run_manifest(args.out / "run_manifest.json", m);

    const IngestResult r =
        args.format == "utkface" ? ingest_utkface_dir(args.dataset_dir) : ingest_cacd_csv(sidecar, args.dataset_dir);
    if (r.records.empty()) throw Error(Errc::EmptyDataset, "no usable records under " + args.dataset_dir.string());

    SplitResult s = split(r.records, args.seed);
    if (args.augment) s.train = augment(s.train);
    write_manifest(args.out / "train.csv", s.train);
    write_manifest(args.out / "val.csv", s.val);
    write_manifest(args.out / "test.csv", s.test);
    write_histogram(args.out / "histogram.csv", r.records);
    std::string rejected = "source,reason\n";
    for (const auto& rr : r.rejected) rejected += csv::escape(rr.source) + "," + csv::escape(rr.reason) + "\n";
    write_file_atomic(args.out / "rejected.csv", rejected);

    out << "records: " << r.records.size() << " (train " << s.train.size() << ", val " << s.val.size() << ", test "
        << s.test.size() << ")\n";
    if (r.excluded_by_rank) out << "excluded by rank > " << kMaxCacdRank << ": " << r.excluded_by_rank << '\n';
    if (!r.rejected.empty()) {
      err << "malformed records: " << r.rejected.size() << '\n';
      for (const auto& rr : r.rejected) err << "  " << rr.source << ": " << rr.reason << '\n';
      return kExitFailure;
    }
    return kExitOk;
  });
}

// --- train ---------------------------------------------------------------------------

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.stage != "1" && args.stage != "2" && args.stage != "both")
      throw Error(Errc::UsageError, "stage must be 1, 2 or both");
    TrainConfig cfg = args.config ? load_train_config(*args.config) : TrainConfig{};
    if (args.seed) cfg.seed = *args.seed;
    if (args.scale) cfg.scale = *args.scale;
    cfg.validate();
    const bool run1 = args.stage != "2";
    const bool run2 = args.stage != "1";
    if (!run1 && !args.checkpoint) throw Error(Errc::WrongStageCheckpoint, "stage 2 needs --checkpoint");

    RunManifest m{"train", args.config ? std::optional(args.config->string()) : std::nullopt, cfg.seed, std::nullopt,
                  {(args.data / "train.csv").string()}, {(args.out / "loss_log.csv").string(), (args.out / "ckpt").string()}};
    if (args.checkpoint) {
      if (!fs::exists(*args.checkpoint / "params.bin"))
        throw Error(Errc::WrongStageCheckpoint, "no checkpoint at " + args.checkpoint->string());
      m.checkpoint_id = checkpoint_id(*args.checkpoint);
    }
    write_run_manifest(args.out / "run_manifest.json", m);

    std::optional<Checkpoint> stage1;
    if (!run1) {
      stage1 = load_checkpoint(*args.checkpoint);
      if (stage1->stage != Stage::Stage1 || !stage1->complete)
        throw Error(Errc::WrongStageCheckpoint, args.checkpoint->string() + " is not a completed stage-1 checkpoint");
    }
    const ImageSet data = load_split(args.data, "train", Split::Train);
    if (run1) fs::remove(args.out / "loss_log.csv");

    TrainOptions opt;
    opt.out_dir = args.out;
    opt.on_epoch = [&](const EpochReport& r) {
      out << "stage " << static_cast<int>(r.stage) << " epoch " << r.epoch << " rec " << r.mean.rec << " total "
          << r.mean.total << '\n';
    };
    if (run1) stage1 = train_stage1(cfg, data, opt).checkpoint;
    if (run2) train_stage2(cfg, *stage1, data, opt);
    return kExitOk;
  });
}

// --- synthesize ------------------------------------------------------------------------

int cmd_synthesize(const SynthesizeArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.age_images.empty()) throw Error(Errc::UsageError, "at least one age reference image is required");
    if (args.identity_images.empty()) throw Error(Errc::UsageError, "at least one identity image is required");
    RunManifest m{"synthesize", std::nullopt, std::nullopt, checkpoint_id(args.checkpoint), {}, {}};
    for (const auto& p : args.identity_images) m.inputs.push_back(p.string());
    for (const auto& p : args.age_images) m.inputs.push_back(p.string());
    m.outputs.push_back((args.out / "grid.png").string());
    for (std::size_t r = 0; r < args.identity_images.size(); ++r)
      for (std::size_t c = 0; c < args.age_images.size(); ++c)
        m.outputs.push_back((args.out / ("cell_" + std::to_string(r) + "_" + std::to_string(c) + ".png")).string());
    write_run_manifest(args.out / "run_manifest.json", m);

    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    std::vector<Tensor<float>> age224;
    std::vector<RawImage> age_tiles;
    for (const auto& p : args.age_images) {
      age224.push_back(load_preprocessed(p, AgeEncoder<float>::kInputSize).pixels);
      age_tiles.push_back(to_raw_image(load_preprocessed(p, IdentityEncoder<float>::kInputSize).pixels));
    }
    const Tensor<float> ages = stack(age224);
    std::vector<RawImage> id_tiles;
    std::vector<std::vector<RawImage>> cells;
    for (std::size_t r = 0; r < args.identity_images.size(); ++r) {
      const Tensor<float> id = load_preprocessed(args.identity_images[r], IdentityEncoder<float>::kInputSize).pixels;
      id_tiles.push_back(to_raw_image(id));
      const std::vector<Tensor<float>> ids(age224.size(), id);
      const Tensor<float> y = ckpt.model.synthesize(stack(ids), ages);
      auto& row = cells.emplace_back();
      for (Index c = 0; c < y.n; ++c) {
        row.push_back(to_raw_image(y, c));
        write_png(args.out / ("cell_" + std::to_string(r) + "_" + std::to_string(c) + ".png"), row.back());
      }
    }
    write_png(args.out / "grid.png", compose_grid(id_tiles, age_tiles, cells));
    out << "wrote " << (args.out / "grid.png").string() << '\n';
    return kExitOk;
  });
}

// --- evaluate --------------------------------------------------------------------------

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string table = args.protocol == "age_acc"       ? "age_accuracy.csv"
                              : args.protocol == "id_features" ? "identity_features.csv"
                              : args.protocol == "consistency" ? "consistency.csv"
                                                               : "";
    if (table.empty()) throw Error(Errc::UsageError, "protocol must be age_acc, id_features or consistency");
    if (args.client != "local" && args.client != "http") throw Error(Errc::UsageError, "client must be local or http");

    RunManifest m{"evaluate:" + args.protocol, std::nullopt, args.seed, checkpoint_id(args.checkpoint),
                  {(args.data / "test.csv").string(), (args.data / "train.csv").string()}, {(args.out / table).string()}};
    if (args.protocol == "age_acc" && !args.classifier.empty() && args.classifier != "oracle" &&
        args.classifier != "random")
      m.inputs.push_back(args.classifier);
    write_run_manifest(args.out / "run_manifest.json", m);

    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const DrasModel& model = ckpt.model;
    const ImageSet test = load_split(args.data, "test", Split::Test);
    if (test.size() == 0) throw Error(Errc::EmptyDataset, "empty test split");
    const Tensor<float> test_images = test.identity_batch(all_indices(test.size()));

    // Test records first, then unflipped train records for groups the test split lacks.
    auto references = [&] {
      std::vector<ImageRecord> candidates = test.records;
      const fs::path train_manifest = args.data / "train.csv";
      if (fs::exists(train_manifest))
        for (auto& r : read_manifest(train_manifest, Split::Train))
          if (!r.flipped) candidates.push_back(std::move(r));
      std::vector<ImageRecord> chosen;
      for (std::size_t i : select_age_references(candidates)) chosen.push_back(candidates[i]);
      const ImageSet picked = load_image_set(chosen, cache_dir_from_env());
      AgeReferences refs;
      for (std::size_t g = 0; g < picked.size(); ++g) refs.emplace(static_cast<int>(g), picked.age_view[g]);
      return refs;
    };

    if (args.protocol == "age_acc") {
      std::unique_ptr<AgeGroupClassifier> clf;
      if (args.classifier == "oracle") clf = std::make_unique<OracleAgeClassifier>();
      else if (args.classifier == "random") clf = std::make_unique<RandomAgeClassifier>(args.seed);
      else if (!args.classifier.empty()) clf = std::make_unique<ConvAgeClassifier>(ConvAgeClassifier::load(args.classifier));
      const AgeAccuracyTable t = age_group_accuracy(model, test_images, references(), clf.get());
      write_accuracy_table(args.out / table, t);
      out << "average accuracy " << t.average << '\n';
    } else if (args.protocol == "id_features") {
      ImageSet both = test;
      const Tensor<float> recon = model.synthesize(test_images, test.age_batch(all_indices(test.size())));
      std::vector<bool> synthesized(test.size(), false);
      for (std::size_t i = 0; i < test.size(); ++i) {
        both.records.push_back(test.records[i]);
        both.identity_view.push_back(slice(recon, static_cast<Index>(i), 1));
        synthesized.push_back(true);
      }
      const auto rows = export_identity_features(model, both, synthesized);
      write_feature_csv(args.out / table, rows);
      out << "rows " << rows.size() << '\n';
    } else {
      std::unique_ptr<VerificationClient> client;
      if (args.client == "local") client = std::make_unique<LocalCosineClient>(model.e_i);
      else client = std::make_unique<HttpVerificationClient>(HttpClientOptions{args.http_endpoint});
      const auto sets = synthesize_group_sets(model, test_images, references());
      const ConsistencyMatrix cm = identity_consistency_matrix(sets, *client, args.max_pairs, args.seed);
      write_consistency_table(args.out / table, cm);
      out << "cells " << cm.entries.size() << '\n';
    }
    return kExitOk;
  });
}

// --- classifier ------------------------------------------------------------------------

int cmd_train_classifier(const TrainClassifierArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunManifest m{"train-classifier", std::nullopt, args.seed, std::nullopt, {(args.data / "train.csv").string()},
                  {args.out.string()}};
    fs::path manifest = args.out;
    manifest += ".manifest.json";
    write_run_manifest(manifest, m);
    const ImageSet data = load_split(args.data, "train", Split::Train);
    ConvAgeClassifier clf(args.seed);
    const auto history = train_age_classifier(clf, data, ClassifierTrainConfig{args.epochs, 16, 1e-3, args.seed});
    for (std::size_t e = 0; e < history.size(); ++e) out << "epoch " << e + 1 << " loss " << history[e] << '\n';
    clf.save(args.out);
    return kExitOk;
  });
}

// --- toy corpus ------------------------------------------------------------------------

int cmd_make_toy(const MakeToyArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.identities < 1 || args.ages.empty()) throw Error(Errc::UsageError, "need identities >= 1 and ages");
    write_run_manifest(args.out / "run_manifest.json",
                       RunManifest{"make-toy", std::nullopt, std::nullopt, std::nullopt, {}, {args.out.string()}});
    const auto paths = write_toy_corpus(args.out, args.identities, args.ages, args.size);
    out << "wrote " << paths.size() << " images to " << args.out.string() << '\n';
    return kExitOk;
  });
}

}  // namespace dras::cli
