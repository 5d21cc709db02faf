#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "dras/evaluation.hpp"

// After Eigen: resolv.h defines a _res macro that collides with Eigen internals.
#include <httplib.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace dras;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
Errc error_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoError;
}

Tensor<float> constant_image(float v) {
  Tensor<float> t(1, 3, 128, 128);
  t.data.setConstant(v);
  return t;
}

// Confidence is an affine function of the two images' mean intensities.
class MeanClient final : public VerificationClient {
 public:
  double confidence(const Tensor<float>& a, const Tensor<float>& b) override {
    ++calls;
    return 50.0 + 10.0 * a.data.mean() + 20.0 * b.data.mean();
  }
  int calls = 0;
};

// One reference per group, taken from a toy identity aged into every group.
AgeReferences all_group_refs() {
  static const ImageSet set = test::toy_set(1, {3, 8, 13, 18, 25, 35, 45, 55, 65, 80});
  AgeReferences refs;
  for (std::size_t k = 0; k < set.records.size(); ++k) refs[set.records[k].age_group] = set.age_view[k];
  return refs;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("oracle classifier scores perfect accuracy in every group") {
    const DrasModel m(ModelConfig{}, 2);
    const auto test = test::toy_set(2, {25}).identity_batch({0, 1});
    OracleAgeClassifier oracle;
    const auto t = age_group_accuracy(m, test, all_group_refs(), &oracle);
    CHECK(t.per_group.size() == 10);
    for (const auto& [g, acc] : t.per_group) CHECK(acc == 1.0);
    CHECK(t.average == 1.0);
  }

  TEST_CASE("random classifier scores chance level") {
    const DrasModel m(ModelConfig{}, 2);
    const auto set = test::toy_set(4, {25});
    std::vector<std::size_t> idx(100);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k % 4;
    RandomAgeClassifier random(7);
    const auto t = age_group_accuracy(m, set.identity_batch(idx), all_group_refs(), &random);
    const double sigma = std::sqrt(0.1 * 0.9 / 1000.0);
    CHECK(std::abs(t.average - 0.1) < 3 * sigma);
  }

  TEST_CASE("age accuracy reports missing inputs") {
    const DrasModel m(ModelConfig{}, 2);
    const auto test = test::toy_set(1, {25}).identity_batch({0});
    OracleAgeClassifier oracle;
    CHECK(error_code([&] { age_group_accuracy(m, test, all_group_refs(), nullptr); }) == Errc::MissingClassifier);
    auto refs = all_group_refs();
    refs.erase(4);
    CHECK(error_code([&] { age_group_accuracy(m, test, refs, &oracle); }) == Errc::MissingReference);
    std::vector<ImageRecord> records(test::toy_set(1, {3, 8}).records);
    CHECK(error_code([&] { select_age_references(records); }) == Errc::MissingReference);
    CHECK(select_age_references(records, 2) == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("accuracy table lists every group and the average") {
    test::TempDir dir("acc");
    AgeAccuracyTable t;
    t.per_group = {{0, 0.5}, {9, 1.0}};
    t.average = 0.75;
    write_accuracy_table(dir.path / "a.csv", t);
    const auto l = lines(dir.path / "a.csv");
    REQUIRE(l.size() == 4);
    CHECK(l[0] == "age_group,label,accuracy");
    CHECK(l[1].rfind("0,0-5,0.5", 0) == 0);
    CHECK(l[3].rfind("average,,0.75", 0) == 0);
  }

  TEST_CASE("consistency of a two-group, two-image fixture matches brute force") {
    const std::map<int, std::vector<Tensor<float>>> sets{
        {0, {constant_image(0.1f), constant_image(-0.3f)}},
        {1, {constant_image(0.5f), constant_image(0.9f)}}};
    MeanClient client;
    const auto m = identity_consistency_matrix(sets, client);
    std::vector<double> vals;
    for (const auto& a : sets.at(0))
      for (const auto& b : sets.at(1)) vals.push_back(50.0 + 10.0 * a.data.mean() + 20.0 * b.data.mean());
    double mean = 0;
    for (double v : vals) mean += v / vals.size();
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean) / vals.size();
    REQUIRE(m.entries.size() == 1);
    const auto& cell = m.entries.at({0, 1});
    CHECK(cell.pairs == 4);
    CHECK(oracle::rel_error(cell.mean, mean) < 1e-12);
    CHECK(oracle::rel_error(cell.stddev, std::sqrt(var)) < 1e-12);
    CHECK(m.group_average.at(0).mean == cell.mean);
    CHECK(m.group_average.at(1).mean == cell.mean);
    CHECK(client.calls == 4);
  }

  TEST_CASE("consistency sampling caps pairs and is seeded") {
    std::map<int, std::vector<Tensor<float>>> sets;
    for (int g = 0; g < 3; ++g)
      for (int k = 0; k < 4; ++k) sets[g].push_back(constant_image(0.1f * static_cast<float>(g * 4 + k) - 0.5f));
    MeanClient a, b;
    const auto x = identity_consistency_matrix(sets, a, 5, 11);
    const auto y = identity_consistency_matrix(sets, b, 5, 11);
    CHECK(x.entries.size() == 3);
    for (const auto& [key, cell] : x.entries) {
      CHECK(key.first < key.second);
      CHECK(cell.pairs == 5);
      CHECK(cell.mean == y.entries.at(key).mean);
    }
    CHECK(x.group_average.at(1).pairs == 10);
    sets[2].clear();
    CHECK(error_code([&] { identity_consistency_matrix(sets, a); }) == Errc::EmptyGroup);
  }

  TEST_CASE("identical sets under the cosine client are fully consistent") {
    const DrasModel m(ModelConfig{}, 3);
    LocalCosineClient client(m.e_i);
    const auto set = test::toy_set(2, {25});
    const std::map<int, std::vector<Tensor<float>>> sets{{0, set.identity_view}, {1, set.identity_view}};
    const auto matrix = identity_consistency_matrix(sets, client);
    const auto p = client.pairwise(set.identity_view, set.identity_view);
    CHECK(p(0, 0) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(p(1, 1) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(p(0, 1) == doctest::Approx(p(1, 0)).epsilon(1e-12));
    CHECK(client.confidence(set.identity_view[0], set.identity_view[0]) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(matrix.entries.at({0, 1}).mean == doctest::Approx((p(0, 0) + p(0, 1) + p(1, 0) + p(1, 1)) / 4).epsilon(1e-9));
  }

  TEST_CASE("cosine confidence properties") {
    Rng rng(41);
    const Vector<float> z = oracle::random_matrix(50, 1, rng).cast<float>();
    CHECK(cosine_confidence(z, z) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(cosine_confidence(z, -z) == doctest::Approx(0.0).epsilon(1e-9));
    const Vector<float> w = oracle::random_matrix(50, 1, rng).cast<float>();
    CHECK(cosine_confidence(z, w) == doctest::Approx(cosine_confidence(3.0f * z, w)).epsilon(1e-6));
    CHECK(cosine_confidence(Vector<float>::Zero(50), w) == 50.0);
    const double c = cosine_confidence(z, w);
    CHECK(c >= 0.0);
    CHECK(c <= 100.0);
  }

  TEST_CASE("identity feature export") {
    test::TempDir dir("features");
    const DrasModel m(ModelConfig{}, 3);
    const auto set = test::toy_set(2, {25, 60});
    const auto rows = export_identity_features(m, set, {false, true, false, true});
    REQUIRE(rows.size() == 4);
    CHECK(rows[1].identity == "id0");
    CHECK(rows[1].age == 60);
    CHECK(rows[1].is_synthesized);
    CHECK(rows[0].features.size() == 50);
    CHECK((rows[0].features - m.e_i.encode(set.identity_view[0]).col(0)).norm() < 1e-5f);
    write_feature_csv(dir.path / "f.csv", rows);
    const auto l = lines(dir.path / "f.csv");
    REQUIRE(l.size() == 5);
    CHECK(l[0].rfind("identity,age,is_synthesized,f0,", 0) == 0);
    CHECK(std::count(l[2].begin(), l[2].end(), ',') == 52);
    CHECK(error_code([&] { export_identity_features(m, set, {true}); }) == Errc::LengthMismatch);
    auto untagged = set;
    untagged.records[2].identity.reset();
    CHECK(error_code([&] { export_identity_features(m, untagged); }) == Errc::MissingIdentityTags);
  }

  TEST_CASE("http verification client talks JSON and retries") {
    httplib::Server server;
    int hits = 0;
    server.Post("/verify", [&](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      const bool same = body.at("image_a") == body.at("image_b");
      res.set_content(nlohmann::json{{"confidence", same ? 99.5 : 12.25}}.dump(), "application/json");
    });
    server.Post("/broken", [&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 500;
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    HttpVerificationClient client({base + "/verify", 2, 5, 1});
    CHECK(client.confidence(constant_image(0.2f), constant_image(0.2f)) == 99.5);
    CHECK(client.confidence(constant_image(0.2f), constant_image(-0.2f)) == 12.25);
    CHECK(hits == 2);

    HttpVerificationClient broken({base + "/broken", 3, 5, 1});
    CHECK(error_code([&] { broken.confidence(constant_image(0), constant_image(0)); }) == Errc::ServiceUnavailable);
    CHECK(hits == 2 + 1 + 3);  // first attempt plus three retries

    server.stop();
    t.join();
    HttpVerificationClient dead({base + "/verify", 2, 1, 1});
    CHECK(error_code([&] { dead.confidence(constant_image(0), constant_image(0)); }) == Errc::ServiceUnavailable);
    CHECK(error_code([&] { HttpVerificationClient({"ftp://x/y", 1, 1, 1}); }) == Errc::UsageError);
  }

  TEST_CASE("softmax cross-entropy gradient matches central differences") {
    Rng rng(42);
    Matrix<double> logits = oracle::random_matrix(4, 3, rng, -2, 2);
    const std::vector<int> labels{0, 3, 2};
    Matrix<float> grad;
    const double loss = softmax_cross_entropy(logits.cast<float>(), labels, &grad);
    double brute = 0;
    for (Index j = 0; j < 3; ++j) {
      const double lse = std::log(logits.col(j).array().exp().sum());
      brute += (lse - logits(labels[static_cast<std::size_t>(j)], j)) / 3;
    }
    CHECK(oracle::rel_error(loss, brute) < 1e-6);
    const auto num = oracle::central_difference(logits.data(), static_cast<std::size_t>(logits.size()), [&] {
      return softmax_cross_entropy(logits.cast<float>(), labels);
    }, 1e-2);
    CHECK(oracle::rel_error(oracle::flatten(Matrix<double>(grad.cast<double>())), num) < 1e-3);
  }

  TEST_CASE("conv classifier saves, loads and learns a separable toy task") {
    test::TempDir dir("clf");
    ConvAgeClassifier clf(5, 2);
    auto set = test::toy_set(3, {5, 75});
    for (auto& r : set.records) r.age_group = r.age < 40 ? 0 : 1;
    ClassifierTrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 6;
    const auto losses = train_age_classifier(clf, set, cfg);
    CHECK(losses.back() < losses.front());
    clf.save(dir.path / "c.bin");
    const auto back = ConvAgeClassifier::load(dir.path / "c.bin", 2);
    const auto batch = set.identity_batch({0, 1, 2, 3, 4, 5});
    CHECK(back.logits(batch) == clf.logits(batch));
    CHECK(back.predict(batch) == clf.predict(batch));
    CHECK(error_code([&] { ConvAgeClassifier::load(dir.path / "none.bin"); }) == Errc::MissingClassifier);
  }
}
