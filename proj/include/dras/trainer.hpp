#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dras/dataset.hpp"
#include "dras/model.hpp"
#include "dras/nn/network.hpp"

namespace dras {

struct TrainConfig {
  double lambda_adv = 1.0;
  double lambda_id = 1e-3;
  double lambda_age = 1e-2;
  double lr = 2e-3;
  double lr_decay = 0.97;  // multiplicative, per epoch
  int batch_size = 100;
  int epochs_stage1 = 30;
  int epochs_stage2 = 30;
  std::uint64_t seed = 0;
  Scale scale = Scale::Desk;
  Index z_dim = 50;
  bool age_backbone_frozen = true;
  bool stage2_keep_rec = false;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int keep_checkpoints = 2;  // per stage; 0 keeps every epoch

  // Throws InvalidConfig unless every λ > 0, lr > 0, batch_size >= 2, ...
  void validate() const;
  ModelConfig model_config() const { return {scale, z_dim, age_backbone_frozen}; }
};

// `key = value` lines; '#' starts a comment. Unknown keys are rejected.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_config_text(const TrainConfig& cfg);

// lr0 · decay^epoch_index (epoch_index counts from 0).
double learning_rate(const TrainConfig& cfg, int epoch_index);

struct LossBundle {
  double adv = 0;  // image adversarial loss, discriminator form
  double z_I = 0;  // prior adversarial loss, discriminator form
  double rec = 0;
  double id = 0;
  double age = 0;
  double total = 0;
};

// λ_adv·adv + λ_id·(z_I + rec + id) + λ_age·age. Throws NonFiniteLoss.
double total_objective(const LossBundle& losses, const TrainConfig& cfg);

enum class Stage { Stage1 = 1, Stage2 = 2 };

struct Optimizers {
  nn::Adam<float> e_i, e_a, d_i, g, d;

  Optimizers() = default;
  Optimizers(const DrasModel& m, const TrainConfig& cfg);
};

struct Checkpoint {
  DrasModel model;
  Optimizers optim;
  Stage stage = Stage::Stage1;
  int epoch = 0;  // completed epochs within `stage`
  bool complete = false;
  std::uint64_t seed = 0;
  TrainConfig config;
};

// Writes params.bin, optimizer.bin, config.txt and meta.json into `dir`
// atomically (staged in a sibling directory, then renamed).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// "<root>/stage{1,2}/epoch_{N}".
std::filesystem::path checkpoint_dir(const std::filesystem::path& root, Stage stage, int epoch);

// Newest checkpoint of `stage` under root (highest epoch), if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& root, Stage stage);

struct LossLogRow {
  Stage stage;
  int epoch;  // 1-based
  int step;   // 1-based within the epoch
  LossBundle losses;
  double lr;
};

inline constexpr const char* kLossLogHeader = "stage,epoch,step,adv,z_I,rec,id,age,total,lr";
std::string format_loss_row(const LossLogRow& row);

struct EpochReport {
  Stage stage;
  int epoch;
  LossBundle mean;
  const DrasModel* model;
};

struct TrainOptions {
  // When set: loss log at <out_dir>/loss_log.csv (appended), checkpoints
  // under <out_dir>/ckpt.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochReport&)> on_epoch;
  std::function<void(const LossLogRow&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogRow> log;
};

// Reconstruction stage: identity and age references are the same image.
TrainResult train_stage1(const TrainConfig& cfg, const ImageSet& data, const TrainOptions& opt = {});

// Preservation stage: E_I, E_A and D_I frozen; independent reference pairs.
TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1, const ImageSet& data,
                         const TrainOptions& opt = {});

// `count` independent uniform (identity, age) index pairs over [0, n).
std::vector<std::pair<std::size_t, std::size_t>> sample_reference_pairs(std::size_t n, std::size_t count, Rng& rng);

// Mean per-coordinate Kolmogorov–Smirnov statistic of feature columns against
// Uniform(-1, 1).
double mean_ks_uniform(const Matrix<float>& features);

}  // namespace dras
