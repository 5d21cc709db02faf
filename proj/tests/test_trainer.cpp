#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dras/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dras;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 2;
  c.seed = 3;
  return c;
}

const ImageSet& tiny_set() {
  static const ImageSet set = test::toy_set(2, {3, 30, 50, 80});
  return set;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config invariants are enforced") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.lambda_age = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.lr = -1;
    CHECK_THROWS_AS(c.validate(), Error);
  }

  TEST_CASE("config text round-trips and rejects unknown keys") {
    TrainConfig c = tiny_config();
    c.lambda_id = 0.125;
    c.scale = Scale::Paper;
    c.stage2_keep_rec = true;
    const TrainConfig back = parse_train_config(to_config_text(c));
    CHECK(to_config_text(back) == to_config_text(c));
    CHECK(back.lambda_id == 0.125);
    CHECK(back.scale == Scale::Paper);
    CHECK(parse_train_config("# comment\n lr = 0.5 # trailing\n\nscale = desk_scale\n").lr == 0.5);
    CHECK_THROWS_AS(parse_train_config("learning_rate = 1\n"), Error);
    CHECK_THROWS_AS(parse_train_config("lr = fast\n"), Error);
    CHECK_THROWS_AS(parse_train_config("batch_size = 1\n"), Error);
    CHECK_THROWS_AS(parse_train_config("no equals sign\n"), Error);
  }

  TEST_CASE("total objective is the weighted sum") {
    const TrainConfig c;
    CHECK(total_objective(LossBundle{}, c) == 0.0);
    LossBundle ones{1, 1, 1, 1, 1, 0};
    CHECK(total_objective(ones, c) == doctest::Approx(1.013).epsilon(1e-12));
    TrainConfig doubled = c;
    doubled.lambda_age = 2e-2;
    LossBundle l{0.3, 0.7, 0.2, 0.9, 1.7, 0};
    CHECK(total_objective(l, doubled) - total_objective(l, c) == doctest::Approx(1e-2 * 1.7).epsilon(1e-9));
    l.rec = std::nan("");
    CHECK_THROWS_AS(total_objective(l, c), Error);
  }

  TEST_CASE("learning rate decays strictly per epoch") {
    const TrainConfig c;
    CHECK(learning_rate(c, 0) == c.lr);
    for (int e = 0; e < 30; ++e) CHECK(learning_rate(c, e + 1) < learning_rate(c, e));
    CHECK(learning_rate(c, 2) == doctest::Approx(c.lr * 0.97 * 0.97));
  }

  TEST_CASE("reference pairs are independent uniform draws") {
    Rng rng(31);
    const std::size_t n = 20, count = 10000;
    const auto pairs = sample_reference_pairs(n, count, rng);
    std::size_t same = 0;
    for (const auto& [i, j] : pairs) {
      CHECK(i < n);
      CHECK(j < n);
      same += i == j;
    }
    const double p = 1.0 / n;
    const double sigma = std::sqrt(p * (1 - p) / count);
    CHECK(std::abs(static_cast<double>(same) / count - p) < 3 * sigma);
    Rng a(5), b(5);
    CHECK(sample_reference_pairs(n, 100, a) == sample_reference_pairs(n, 100, b));
    CHECK_THROWS_AS(sample_reference_pairs(0, 1, a), Error);
  }

  TEST_CASE("KS statistic against Uniform(-1, 1)") {
    const Index n = 40;
    Matrix<float> grid(2, n);
    for (Index k = 0; k < n; ++k) grid(0, k) = grid(1, k) = static_cast<float>(-1.0 + 2.0 * (k + 0.5) / n);
    CHECK(mean_ks_uniform(grid) == doctest::Approx(0.5 / n).epsilon(1e-5));
    CHECK(mean_ks_uniform(Matrix<float>::Zero(3, 10)) == doctest::Approx(0.5));
    CHECK(mean_ks_uniform(Matrix<float>::Ones(3, 10)) == doctest::Approx(1.0));
    Rng rng(32);
    const Matrix<float> u = sample_prior<float>(4, 2000, rng);
    CHECK(mean_ks_uniform(u) < 0.05);
  }

  TEST_CASE("stage 1 logs consistent totals and is reproducible") {
    test::TempDir dir("stage1");
    TrainOptions opt;
    opt.out_dir = dir.path;
    int epochs_seen = 0;
    opt.on_epoch = [&](const EpochReport& r) {
      ++epochs_seen;
      CHECK(r.stage == Stage::Stage1);
    };
    const auto a = train_stage1(tiny_config(), tiny_set(), opt);
    CHECK(epochs_seen == 2);
    CHECK(a.log.size() == 4);
    for (const auto& row : a.log) {
      const auto& l = row.losses;
      CHECK(oracle::rel_error(l.total, total_objective(l, tiny_config())) < 1e-12);
      for (double v : {l.adv, l.z_I, l.rec, l.id, l.age}) CHECK(v >= 0);
    }
    CHECK(a.log[2].lr == doctest::Approx(tiny_config().lr * tiny_config().lr_decay));
    CHECK(a.checkpoint.complete);
    CHECK(a.checkpoint.epoch == 2);
    CHECK(fs::exists(dir.path / "loss_log.csv"));
    CHECK(fs::exists(checkpoint_dir(dir.path / "ckpt", Stage::Stage1, 2) / "meta.json"));
    CHECK(latest_checkpoint(dir.path / "ckpt", Stage::Stage1) == checkpoint_dir(dir.path / "ckpt", Stage::Stage1, 2));

    const auto b = train_stage1(tiny_config(), tiny_set());
    REQUIRE(b.log.size() == a.log.size());
    for (std::size_t k = 0; k < a.log.size(); ++k) CHECK(format_loss_row(a.log[k]) == format_loss_row(b.log[k]));
    CHECK(a.checkpoint.model.checksum_g() == b.checkpoint.model.checksum_g());
  }

  TEST_CASE("stage 1 updates the encoders, the age head and both discriminators") {
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 1;
    const DrasModel init(c.model_config(), c.seed);
    const auto r = train_stage1(c, tiny_set());
    const DrasModel& m = r.checkpoint.model;
    CHECK(m.checksum_e_i() != init.checksum_e_i());
    CHECK(m.e_a.head_checksum() != init.e_a.head_checksum());
    CHECK(m.e_a.backbone_checksum() == init.e_a.backbone_checksum());
    CHECK(m.checksum_d_i() != init.checksum_d_i());
    CHECK(m.checksum_g() != init.checksum_g());
    CHECK(m.checksum_d() != init.checksum_d());
  }

  TEST_CASE("stage 2 freezes the agents and the prior discriminator") {
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 1;
    const auto s1 = train_stage1(c, tiny_set());
    const auto& m1 = s1.checkpoint.model;
    TrainOptions opt;
    int epochs = 0;
    opt.on_epoch = [&](const EpochReport& r) {
      ++epochs;
      CHECK(r.model->checksum_e_i() == m1.checksum_e_i());
      CHECK(r.model->checksum_e_a() == m1.checksum_e_a());
      CHECK(r.model->checksum_d_i() == m1.checksum_d_i());
    };
    const auto s2 = train_stage2(c, s1.checkpoint, tiny_set(), opt);
    CHECK(epochs == 2);
    CHECK(s2.checkpoint.model.checksum_g() != m1.checksum_g());
    CHECK(s2.checkpoint.stage == Stage::Stage2);
    for (const auto& row : s2.log) CHECK(row.losses.rec == 0.0);

    c.stage2_keep_rec = true;
    const auto kept = train_stage2(c, s1.checkpoint, tiny_set());
    for (const auto& row : kept.log) CHECK(row.losses.rec > 0.0);
  }

  TEST_CASE("stage 2 rejects anything but a completed stage-1 checkpoint") {
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 1;
    auto s1 = train_stage1(c, tiny_set()).checkpoint;
    s1.complete = false;
    CHECK_THROWS_AS(train_stage2(c, s1, tiny_set()), Error);
    s1.complete = true;
    s1.stage = Stage::Stage2;
    CHECK_THROWS_AS(train_stage2(c, s1, tiny_set()), Error);
    CHECK_THROWS_AS(train_stage1(c, ImageSet{}), Error);
  }

  TEST_CASE("checkpoints round-trip parameters, optimizer state and outputs") {
    test::TempDir dir("ckpt");
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 1;
    const auto s1 = train_stage1(c, tiny_set()).checkpoint;
    save_checkpoint(dir.path / "c", s1);
    const auto back = load_checkpoint(dir.path / "c");
    CHECK(back.stage == Stage::Stage1);
    CHECK(back.epoch == 1);
    CHECK(back.complete);
    CHECK(back.seed == c.seed);
    CHECK(to_config_text(back.config) == to_config_text(c));
    CHECK(back.optim.g.steps() == s1.optim.g.steps());
    const auto probe = tiny_set().identity_batch({0, 3});
    const auto probe224 = tiny_set().age_batch({1, 2});
    CHECK(back.model.synthesize(probe, probe224).data == s1.model.synthesize(probe, probe224).data);
    CHECK(back.model.d.discriminate(probe) == s1.model.d.discriminate(probe));

    // Continuing from the restored checkpoint matches continuing in memory.
    const auto a = train_stage2(c, s1, tiny_set());
    const auto b = train_stage2(c, back, tiny_set());
    CHECK(a.checkpoint.model.checksum_g() == b.checkpoint.model.checksum_g());

    std::ofstream(dir.path / "c" / "params.bin", std::ios::trunc) << "junk";
    CHECK_THROWS_AS(load_checkpoint(dir.path / "c"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing"), Error);
  }

  TEST_CASE("old checkpoints are pruned") {
    test::TempDir dir("prune");
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 3;
    c.keep_checkpoints = 1;
    TrainOptions opt;
    opt.out_dir = dir.path;
    train_stage1(c, tiny_set(), opt);
    CHECK(!fs::exists(checkpoint_dir(dir.path / "ckpt", Stage::Stage1, 1)));
    CHECK(!fs::exists(checkpoint_dir(dir.path / "ckpt", Stage::Stage1, 2)));
    CHECK(fs::exists(checkpoint_dir(dir.path / "ckpt", Stage::Stage1, 3)));
  }

  TEST_CASE("non-finite losses abort with a pointer to the last good checkpoint") {
    test::TempDir dir("diverge");
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 3;
    c.lr = 1e30;
    TrainOptions opt;
    opt.out_dir = dir.path;
    try {
      train_stage1(c, tiny_set(), opt);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::DivergenceDetected);
      CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
    }
  }

  TEST_CASE("loss log rows follow the declared header") {
    test::TempDir dir("log");
    TrainConfig c = tiny_config();
    c.epochs_stage1 = 1;
    TrainOptions opt;
    opt.out_dir = dir.path;
    train_stage1(c, tiny_set(), opt);
    const std::string text = slurp(dir.path / "loss_log.csv");
    CHECK(text.rfind(std::string(kLossLogHeader) + "\n1,1,1,", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  }

  TEST_CASE("one discriminator step against a frozen generator lowers its own loss") {
    Rng rng(33);
    const DrasModel m(ModelConfig{}, 4);
    const auto real = tiny_set().identity_batch({0, 1, 2, 3});
    const Matrix<float> z = m.e_i.encode(real);
    const Matrix<float> a = m.e_a.encode(tiny_set().age_batch({4, 5, 6, 7}));
    const auto fake = m.g.generate(compose_joint_feature(z, a));
    auto d = m.d;
    auto loss = [&] {
      const Matrix<float> pr = d.discriminate(real), pf = d.discriminate(fake);
      return image_adversarial_loss(pr, pr, pf).discriminator;
    };
    const float before = loss();
    nn::Adam<float> opt(d.network());
    auto grads = d.network().zero_grads();
    nn::Network<float>::Trace t;
    for (const auto* x : {&real, &real}) {
      const Matrix<float> p = d.discriminate(*x);
      d.logits(*x, t);
      d.network().backward(t, Tensor<float>::features(through_sigmoid(real_term_grad(p), p)), &grads, false);
    }
    const Matrix<float> pf = d.discriminate(fake);
    d.logits(fake, t);
    d.network().backward(t, Tensor<float>::features(through_sigmoid(fake_term_grad(pf), pf)), &grads, false);
    opt.step(d.network(), grads, 1e-4);
    CHECK(loss() < before);
  }
}
