#include "dras/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dras/image_io.hpp"
#include "dras/version.hpp"

namespace dras {

namespace fs = std::filesystem;

// --- configuration -------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
  if (!(lambda_adv > 0) || !(lambda_id > 0) || !(lambda_age > 0)) fail("all lambda weights must be > 0");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must be in (0, 1]");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) fail("epoch counts must be >= 0");
  if (z_dim < 1) fail("z_dim must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam betas in [0, 1)");
  if (keep_checkpoints < 0) fail("keep_checkpoints must be >= 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw Error(Errc::InvalidConfig, "bad number for " + key + ": '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw Error(Errc::InvalidConfig, "bad integer for " + key + ": '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(Errc::InvalidConfig, "bad boolean for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string v = trim(t.substr(eq + 1));
    if (key == "lambda_adv") cfg.lambda_adv = to_double(key, v);
    else if (key == "lambda_id") cfg.lambda_id = to_double(key, v);
    else if (key == "lambda_age") cfg.lambda_age = to_double(key, v);
    else if (key == "lr") cfg.lr = to_double(key, v);
    else if (key == "lr_decay") cfg.lr_decay = to_double(key, v);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_int(key, v));
    else if (key == "epochs_stage1") cfg.epochs_stage1 = static_cast<int>(to_int(key, v));
    else if (key == "epochs_stage2") cfg.epochs_stage2 = static_cast<int>(to_int(key, v));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "scale") cfg.scale = parse_scale(v);
    else if (key == "z_dim") cfg.z_dim = static_cast<Index>(to_int(key, v));
    else if (key == "age_backbone_frozen") cfg.age_backbone_frozen = to_bool(key, v);
    else if (key == "stage2_keep_rec") cfg.stage2_keep_rec = to_bool(key, v);
    else if (key == "adam_beta1") cfg.adam_beta1 = to_double(key, v);
    else if (key == "adam_beta2") cfg.adam_beta2 = to_double(key, v);
    else if (key == "keep_checkpoints") cfg.keep_checkpoints = static_cast<int>(to_int(key, v));
    else throw Error(Errc::InvalidConfig, "unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  return parse_train_config(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "lambda_adv = " << fmt(c.lambda_adv) << '\n'
     << "lambda_id = " << fmt(c.lambda_id) << '\n'
     << "lambda_age = " << fmt(c.lambda_age) << '\n'
     << "lr = " << fmt(c.lr) << '\n'
     << "lr_decay = " << fmt(c.lr_decay) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "epochs_stage1 = " << c.epochs_stage1 << '\n'
     << "epochs_stage2 = " << c.epochs_stage2 << '\n'
     << "seed = " << c.seed << '\n'
     << "scale = " << to_string(c.scale) << '\n'
     << "z_dim = " << c.z_dim << '\n'
     << "age_backbone_frozen = " << (c.age_backbone_frozen ? "true" : "false") << '\n'
     << "stage2_keep_rec = " << (c.stage2_keep_rec ? "true" : "false") << '\n'
     << "adam_beta1 = " << fmt(c.adam_beta1) << '\n'
     << "adam_beta2 = " << fmt(c.adam_beta2) << '\n'
     << "keep_checkpoints = " << c.keep_checkpoints << '\n';
  return os.str();
}

double learning_rate(const TrainConfig& cfg, int epoch_index) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch_index));
}

double total_objective(const LossBundle& l, const TrainConfig& cfg) {
  for (double v : {l.adv, l.z_I, l.rec, l.id, l.age})
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteLoss, "non-finite loss component");
  return cfg.lambda_adv * l.adv + cfg.lambda_id * (l.z_I + l.rec + l.id) + cfg.lambda_age * l.age;
}

std::string format_loss_row(const LossLogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<int>(r.stage), r.epoch,
                r.step, r.losses.adv, r.losses.z_I, r.losses.rec, r.losses.id, r.losses.age, r.losses.total, r.lr);
  return buf;
}

// --- checkpoints -----------------------------------------------------------------

Optimizers::Optimizers(const DrasModel& m, const TrainConfig& cfg) {
  const nn::Adam<float>::Options o{cfg.adam_beta1, cfg.adam_beta2, 1e-8};
  e_i = nn::Adam<float>(m.e_i.network(), o);
  e_a = nn::Adam<float>(m.e_a.network(), o);
  d_i = nn::Adam<float>(m.d_i.network(), o);
  g = nn::Adam<float>(m.g.network(), o);
  d = nn::Adam<float>(m.d.network(), o);
}

namespace {

void export_moments(const nn::Network<float>& net, nn::Adam<float>& opt, const std::string& prefix, ParamBlob& blob) {
  const auto names = net.named_parameters();
  std::size_t flat = 0;
  for (std::size_t l = 0; l < net.depth(); ++l)
    for (std::size_t k = 0; k < net.layer(l).params().size(); ++k, ++flat) {
      if (opt.first_moment().size() <= l || opt.first_moment()[l].empty()) continue;
      blob.arrays[prefix + "m." + names[flat].first] = opt.first_moment()[l][k];
      blob.arrays[prefix + "v." + names[flat].first] = opt.second_moment()[l][k];
    }
}

void import_moments(const nn::Network<float>& net, nn::Adam<float>& opt, const std::string& prefix,
                    const ParamBlob& blob) {
  const auto names = net.named_parameters();
  std::size_t flat = 0;
  for (std::size_t l = 0; l < net.depth(); ++l)
    for (std::size_t k = 0; k < net.layer(l).params().size(); ++k, ++flat) {
      if (opt.first_moment().size() <= l || opt.first_moment()[l].empty()) continue;
      const auto m = blob.arrays.find(prefix + "m." + names[flat].first);
      const auto v = blob.arrays.find(prefix + "v." + names[flat].first);
      if (m == blob.arrays.end() || v == blob.arrays.end())
        throw Error(Errc::CorruptCheckpoint, "missing optimizer state for " + prefix + names[flat].first);
      opt.first_moment()[l][k] = m->second;
      opt.second_moment()[l][k] = v->second;
    }
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& c) {
  auto staging = dir;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging);
  write_blob(staging / "params.bin", c.model.export_parameters());

  auto optim = c.optim;
  ParamBlob ob;
  export_moments(c.model.e_i.network(), optim.e_i, "e_i.", ob);
  export_moments(c.model.e_a.network(), optim.e_a, "e_a.", ob);
  export_moments(c.model.d_i.network(), optim.d_i, "d_i.", ob);
  export_moments(c.model.g.network(), optim.g, "g.", ob);
  export_moments(c.model.d.network(), optim.d, "d.", ob);
  write_blob(staging / "optimizer.bin", ob);

  write_file_atomic(staging / "config.txt", to_config_text(c.config));

  nlohmann::ordered_json meta;
  meta["format"] = "dras-checkpoint-1";
  meta["tool_version"] = kVersion;
  meta["stage"] = static_cast<int>(c.stage);
  meta["epoch"] = c.epoch;
  meta["complete"] = c.complete;
  meta["seed"] = c.seed;
  meta["optimizer_steps"] = {{"e_i", c.optim.e_i.steps()}, {"e_a", c.optim.e_a.steps()},
                             {"d_i", c.optim.d_i.steps()}, {"g", c.optim.g.steps()},
                             {"d", c.optim.d.steps()}};
  meta["checksums"] = {{"e_i", hex(c.model.checksum_e_i())}, {"e_a", hex(c.model.checksum_e_a())},
                       {"d_i", hex(c.model.checksum_d_i())}, {"g", hex(c.model.checksum_g())},
                       {"d", hex(c.model.checksum_d())}};
  write_file_atomic(staging / "meta.json", meta.dump(2) + "\n");

  fs::remove_all(dir);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(staging, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::WrongStageCheckpoint, "no checkpoint at " + dir.string());
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw Error(Errc::CorruptCheckpoint, "missing meta.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mf);
  } catch (const std::exception& e) {
    throw Error(Errc::CorruptCheckpoint, std::string("meta.json: ") + e.what());
  }
  Checkpoint c;
  c.config = load_train_config(dir / "config.txt");
  c.stage = meta.at("stage").get<int>() == 2 ? Stage::Stage2 : Stage::Stage1;
  c.epoch = meta.at("epoch").get<int>();
  c.complete = meta.at("complete").get<bool>();
  c.seed = meta.at("seed").get<std::uint64_t>();
  c.model = DrasModel(c.config.model_config(), c.config.seed);
  c.model.import_parameters(read_blob(dir / "params.bin"));
  c.optim = Optimizers(c.model, c.config);
  const ParamBlob ob = read_blob(dir / "optimizer.bin");
  import_moments(c.model.e_i.network(), c.optim.e_i, "e_i.", ob);
  import_moments(c.model.e_a.network(), c.optim.e_a, "e_a.", ob);
  import_moments(c.model.d_i.network(), c.optim.d_i, "d_i.", ob);
  import_moments(c.model.g.network(), c.optim.g, "g.", ob);
  import_moments(c.model.d.network(), c.optim.d, "d.", ob);
  const auto& steps = meta.at("optimizer_steps");
  c.optim.e_i.set_steps(steps.at("e_i").get<std::int64_t>());
  c.optim.e_a.set_steps(steps.at("e_a").get<std::int64_t>());
  c.optim.d_i.set_steps(steps.at("d_i").get<std::int64_t>());
  c.optim.g.set_steps(steps.at("g").get<std::int64_t>());
  c.optim.d.set_steps(steps.at("d").get<std::int64_t>());
  return c;
}

fs::path checkpoint_dir(const fs::path& root, Stage stage, int epoch) {
  return root / ("stage" + std::to_string(static_cast<int>(stage))) / ("epoch_" + std::to_string(epoch));
}

std::optional<fs::path> latest_checkpoint(const fs::path& root, Stage stage) {
  const fs::path dir = root / ("stage" + std::to_string(static_cast<int>(stage)));
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  int best_epoch = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("epoch_", 0) != 0 || name.find('.') != std::string::npos) continue;
    const int epoch = std::atoi(name.c_str() + 6);
    if (epoch > best_epoch && fs::exists(e.path() / "meta.json")) {
      best_epoch = epoch;
      best = e.path();
    }
  }
  return best;
}

// --- training ----------------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> sample_reference_pairs(std::size_t n, std::size_t count, Rng& rng) {
  if (n == 0) throw Error(Errc::EmptyDataset, "no references to sample");
  std::vector<std::pair<std::size_t, std::size_t>> out(count);
  for (auto& p : out) {
    p.first = static_cast<std::size_t>(rng.below(n));
    p.second = static_cast<std::size_t>(rng.below(n));
  }
  return out;
}

double mean_ks_uniform(const Matrix<float>& features) {
  if (features.cols() == 0) return 0;
  const auto n = static_cast<double>(features.cols());
  double sum = 0;
  std::vector<double> v(static_cast<std::size_t>(features.cols()));
  for (Index r = 0; r < features.rows(); ++r) {
    for (Index k = 0; k < features.cols(); ++k) v[static_cast<std::size_t>(k)] = features(r, k);
    std::sort(v.begin(), v.end());
    double d = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double cdf = std::clamp((v[k] + 1.0) / 2.0, 0.0, 1.0);
      d = std::max({d, (static_cast<double>(k) + 1) / n - cdf, cdf - static_cast<double>(k) / n});
    }
    sum += d;
  }
  return sum / static_cast<double>(features.rows());
}

namespace {

using Trace = nn::Network<float>::Trace;
using Grads = nn::Gradients<float>;

// d/d(logit) of −mean log σ(l) and of −mean log(1 − σ(l)).
Matrix<float> real_logit_grad(const Matrix<float>& p) {
  return ((p.array() - 1.0f) / static_cast<float>(p.size())).matrix();
}
Matrix<float> fake_logit_grad(const Matrix<float>& p) { return (p.array() / static_cast<float>(p.size())).matrix(); }

Tensor<float> as_features(Matrix<float> m) { return Tensor<float>::features(std::move(m)); }

class Session {
 public:
  Session(const TrainConfig& cfg, const ImageSet& data, const TrainOptions& opt, Checkpoint ckpt, Stage stage)
      : cfg_(cfg), data_(data), opt_(opt), ckpt_(std::move(ckpt)), stage_(stage),
        rng_(Rng(cfg.seed).fork(static_cast<std::uint64_t>(stage) * 7919)) {}

  TrainResult run() {
    const int epochs = stage_ == Stage::Stage1 ? cfg_.epochs_stage1 : cfg_.epochs_stage2;
    const auto n = data_.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), n);
    const std::size_t steps = (n + batch - 1) / batch;
    std::optional<fs::path> last_good;
    if (opt_.out_dir) open_log();

    for (int e = 0; e < epochs; ++e) {
      const double lr = learning_rate(cfg_, e);
      LossBundle sum;
      std::vector<std::size_t> order = rng_.permutation(n);
      for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t first = s * batch;
        const std::size_t count = std::min(batch, n - first);
        auto diverged = [&](const std::string& what) {
          return Error(Errc::DivergenceDetected,
                       what + " at stage " + std::to_string(static_cast<int>(stage_)) + " epoch " +
                           std::to_string(e + 1) + " step " + std::to_string(s + 1) + "; last good checkpoint: " +
                           (last_good ? last_good->string() : std::string("none")));
        };
        LossBundle l;
        try {
          if (stage_ == Stage::Stage1) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(first + count));
            l = stage1_step(idx, lr);
          } else {
            const auto pairs = sample_reference_pairs(n, count, rng_);
            l = stage2_step(pairs, lr);
          }
        } catch (const Error& err) {
          // Non-finite parameters surface as invalid features or scores.
          if (err.code() == Errc::InvalidComponent || err.code() == Errc::ScoreOutOfRange ||
              err.code() == Errc::NonFiniteLoss)
            throw diverged(std::string("non-finite values (") + err.what() + ")");
          throw;
        }
        for (double v : {l.adv, l.z_I, l.rec, l.id, l.age, l.total})
          if (!std::isfinite(v)) throw diverged("non-finite loss");
        const LossLogRow row{stage_, e + 1, static_cast<int>(s + 1), l, lr};
        log_.push_back(row);
        if (log_file_) *log_file_ << format_loss_row(row) << '\n';
        if (opt_.on_step) opt_.on_step(row);
        accumulate(sum, l, 1.0 / static_cast<double>(steps));
      }
      if (log_file_) log_file_->flush();
      ckpt_.stage = stage_;
      ckpt_.epoch = e + 1;
      ckpt_.complete = e + 1 == epochs;
      if (opt_.out_dir) {
        last_good = checkpoint_dir(*opt_.out_dir / "ckpt", stage_, e + 1);
        save_checkpoint(*last_good, ckpt_);
        prune(e + 1);
      }
      if (opt_.on_epoch) opt_.on_epoch(EpochReport{stage_, e + 1, sum, &ckpt_.model});
    }
    if (epochs == 0) {
      ckpt_.stage = stage_;
      ckpt_.epoch = 0;
      ckpt_.complete = true;
    }
    return {std::move(ckpt_), std::move(log_)};
  }

 private:
  const TrainConfig& cfg_;
  const ImageSet& data_;
  const TrainOptions& opt_;
  Checkpoint ckpt_;
  Stage stage_;
  Rng rng_;
  std::vector<LossLogRow> log_;
  std::optional<std::ofstream> log_file_;

  void open_log() {
    fs::create_directories(*opt_.out_dir);
    const fs::path path = *opt_.out_dir / "loss_log.csv";
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    log_file_.emplace(path, std::ios::app);
    if (!*log_file_) throw Error(Errc::IoError, "cannot open " + path.string());
    if (fresh) *log_file_ << kLossLogHeader << '\n';
  }

  void prune(int epoch) {
    if (cfg_.keep_checkpoints <= 0) return;
    const int stale = epoch - cfg_.keep_checkpoints;
    if (stale >= 1) fs::remove_all(checkpoint_dir(*opt_.out_dir / "ckpt", stage_, stale));
  }

  static void accumulate(LossBundle& acc, const LossBundle& l, double w) {
    acc.adv += w * l.adv;
    acc.z_I += w * l.z_I;
    acc.rec += w * l.rec;
    acc.id += w * l.id;
    acc.age += w * l.age;
    acc.total += w * l.total;
  }

  // One discriminator update on (real..., fake) images; returns nothing, the
  // loss value is computed by the caller from the same scores.
  void update_image_discriminator(const std::vector<const Tensor<float>*>& reals, const Tensor<float>& fake,
                                  double lr) {
    auto& net = ckpt_.model.d;
    Grads gd = net.network().zero_grads();
    Trace t;
    for (const auto* real : reals) {
      const Matrix<float> p = sigmoid(net.logits(*real, t));
      net.network().backward(t, as_features(real_logit_grad(p)), &gd, false);
    }
    const Matrix<float> p = sigmoid(net.logits(fake, t));
    net.network().backward(t, as_features(fake_logit_grad(p)), &gd, false);
    ckpt_.optim.d.step(net.network(), gd, lr);
  }

  // Non-saturating generator-side gradient on the image: d/dy of −mean log D(y).
  Tensor<float> adversarial_image_grad(const Tensor<float>& y) {
    Trace t;
    const Matrix<float> p = sigmoid(ckpt_.model.d.logits(y, t));
    return ckpt_.model.d.network().backward(t, as_features(real_logit_grad(p)), nullptr, true);
  }

  LossBundle stage1_step(const std::vector<std::size_t>& idx, double lr) {
    DrasModel& m = ckpt_.model;
    const Tensor<float> x128 = data_.identity_batch(idx);
    const Tensor<float> x224 = data_.age_batch(idx);
    const auto b = static_cast<Index>(idx.size());
    const Index zd = m.e_i.z_dim();

    Trace t_ei, t_ea, t_g, t_eas;
    const Matrix<float> z = m.e_i.encode(x128, t_ei);
    const Matrix<float> a = m.e_a.encode(x224, t_ea);
    const Tensor<float> y = m.g.generate(compose_joint_feature(z, a), t_g);
    const Matrix<float> a_syn = m.e_a.encode(to_age_resolution(y), t_eas);

    LossBundle l;
    l.rec = reconstruction_loss(x128, y);
    l.age = age_preservation_loss(a, a_syn);
    l.id = identity_preservation_loss(z, m.e_i.encode(y));

    // Identity references double as age references in this stage.
    const Matrix<float> d_real = m.d.discriminate(x128);
    const Matrix<float> d_fake = m.d.discriminate(y);
    l.adv = image_adversarial_loss(d_real, d_real, d_fake).discriminator;

    const Matrix<float> prior = sample_prior<float>(zd, b, rng_);
    Trace t_dir, t_dif;
    const Matrix<float> p_real = sigmoid(m.d_i.logits(prior, t_dir));
    const Matrix<float> p_fake = sigmoid(m.d_i.logits(z, t_dif));
    l.z_I = prior_adversarial_loss(p_real, p_fake).discriminator;
    l.total = total_objective(l, cfg_);

    // Discriminators.
    update_image_discriminator({&x128, &x128}, y, lr);
    {
      Grads g = m.d_i.network().zero_grads();
      m.d_i.network().backward(t_dir, as_features(real_logit_grad(p_real)), &g, false);
      m.d_i.network().backward(t_dif, as_features(fake_logit_grad(p_fake)), &g, false);
      ckpt_.optim.d_i.step(m.d_i.network(), g, lr);
    }

    // Encoders and generator against the updated discriminators.
    const auto lam_adv = static_cast<float>(cfg_.lambda_adv);
    const auto lam_id = static_cast<float>(cfg_.lambda_id);
    const auto lam_age = static_cast<float>(cfg_.lambda_age);

    Grads g_g = m.g.network().zero_grads();
    Grads g_ei = m.e_i.network().zero_grads();
    Grads g_ea = m.e_a.network().zero_grads();

    // Age preservation through both age-encoder branches.
    const Matrix<float> da_syn = lam_age * batch_l2_distance_grad(a, a_syn);
    const Tensor<float> dy224 = m.e_a.network().backward(t_eas, as_features(da_syn), &g_ea, true);
    Tensor<float> dy_age = from_age_resolution_grad(dy224);
    Matrix<float> da = -da_syn;

    Tensor<float> dy_rec = reconstruction_loss_grad(x128, y);
    dy_rec.data *= lam_id;
    const Tensor<float> dj_rec = m.g.network().backward(t_g, dy_rec, &g_g, true);
    const Tensor<float> dj_age = m.g.network().backward(t_g, dy_age, &g_g, true);
    Tensor<float> dy_adv = adversarial_image_grad(y);
    dy_adv.data *= lam_adv;
    m.g.network().backward(t_g, dy_adv, &g_g, false);

    // Identity encoder: reconstruction + prior matching.
    Trace t_dif2;
    const Matrix<float> p_fake2 = sigmoid(m.d_i.logits(z, t_dif2));
    const Tensor<float> dz_prior =
        m.d_i.network().backward(t_dif2, as_features(real_logit_grad(p_fake2)), nullptr, true);
    Matrix<float> dz = dj_rec.data.topRows(zd) + lam_id * dz_prior.data;
    m.e_i.network().backward(t_ei, as_features(std::move(dz)), &g_ei, false);

    // Age encoder head: reconstruction + age preservation.
    da += dj_rec.data.bottomRows(kAgeFeatureDim) + dj_age.data.bottomRows(kAgeFeatureDim);
    m.e_a.network().backward(t_ea, as_features(std::move(da)), &g_ea, false);

    ckpt_.optim.g.step(m.g.network(), g_g, lr);
    ckpt_.optim.e_i.step(m.e_i.network(), g_ei, lr);
    ckpt_.optim.e_a.step(m.e_a.network(), g_ea, lr);
    return l;
  }

  LossBundle stage2_step(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, double lr) {
    DrasModel& m = ckpt_.model;
    std::vector<std::size_t> id_idx, age_idx;
    for (const auto& [i, j] : pairs) {
      id_idx.push_back(i);
      age_idx.push_back(j);
    }
    const Tensor<float> xi128 = data_.identity_batch(id_idx);
    const Tensor<float> xj128 = data_.identity_batch(age_idx);
    const Tensor<float> xj224 = data_.age_batch(age_idx);
    const auto b = static_cast<Index>(pairs.size());

    const Matrix<float> z = m.e_i.encode(xi128);
    const Matrix<float> a = m.e_a.encode(xj224);
    Trace t_g, t_eis, t_eas;
    const Tensor<float> y = m.g.generate(compose_joint_feature(z, a), t_g);
    const Matrix<float> z_syn = m.e_i.encode(y, t_eis);
    const Matrix<float> a_syn = m.e_a.encode(to_age_resolution(y), t_eas);

    LossBundle l;
    l.id = identity_preservation_loss(z, z_syn);
    l.age = age_preservation_loss(a, a_syn);
    l.adv = image_adversarial_loss(m.d.discriminate(xi128), m.d.discriminate(xj128), m.d.discriminate(y))
                .discriminator;
    const Matrix<float> prior = sample_prior<float>(m.e_i.z_dim(), b, rng_);
    l.z_I = prior_adversarial_loss(m.d_i.scores(prior), m.d_i.scores(z)).discriminator;

    Trace t_rec;
    Tensor<float> y_rec;
    if (cfg_.stage2_keep_rec) {
      const Matrix<float> a_i = m.e_a.encode(data_.age_batch(id_idx));
      y_rec = m.g.generate(compose_joint_feature(z, a_i), t_rec);
      l.rec = reconstruction_loss(xi128, y_rec);
    }
    l.total = total_objective(l, cfg_);

    update_image_discriminator({&xi128, &xj128}, y, lr);

    const auto lam_adv = static_cast<float>(cfg_.lambda_adv);
    const auto lam_id = static_cast<float>(cfg_.lambda_id);
    const auto lam_age = static_cast<float>(cfg_.lambda_age);

    // Preservation gradients reach G through the frozen agents.
    const Tensor<float> dy_id =
        m.e_i.network().backward(t_eis, as_features(lam_id * batch_l2_distance_grad(z, z_syn)), nullptr, true);
    const Tensor<float> dy_age = from_age_resolution_grad(
        m.e_a.network().backward(t_eas, as_features(lam_age * batch_l2_distance_grad(a, a_syn)), nullptr, true));
    Tensor<float> dy = adversarial_image_grad(y);
    dy.data = lam_adv * dy.data + dy_id.data + dy_age.data;

    Grads g_g = m.g.network().zero_grads();
    m.g.network().backward(t_g, dy, &g_g, false);
    if (cfg_.stage2_keep_rec) {
      Tensor<float> dy_rec = reconstruction_loss_grad(xi128, y_rec);
      dy_rec.data *= lam_id;
      m.g.network().backward(t_rec, dy_rec, &g_g, false);
    }
    ckpt_.optim.g.step(m.g.network(), g_g, lr);
    return l;
  }
};

}  // namespace

TrainResult train_stage1(const TrainConfig& cfg, const ImageSet& data, const TrainOptions& opt) {
  cfg.validate();
  if (data.size() == 0) throw Error(Errc::EmptyDataset, "empty training split");
  Checkpoint ckpt;
  ckpt.model = DrasModel(cfg.model_config(), cfg.seed);
  ckpt.optim = Optimizers(ckpt.model, cfg);
  ckpt.seed = cfg.seed;
  ckpt.config = cfg;
  return Session(cfg, data, opt, std::move(ckpt), Stage::Stage1).run();
}

TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1, const ImageSet& data,
                         const TrainOptions& opt) {
  cfg.validate();
  if (stage1.stage != Stage::Stage1 || !stage1.complete)
    throw Error(Errc::WrongStageCheckpoint, "stage 2 requires a completed stage-1 checkpoint");
  if (data.size() == 0) throw Error(Errc::EmptyDataset, "empty training split");
  Checkpoint ckpt = stage1;
  ckpt.config = cfg;
  ckpt.complete = false;
  return Session(cfg, data, opt, std::move(ckpt), Stage::Stage2).run();
}

}  // namespace dras
