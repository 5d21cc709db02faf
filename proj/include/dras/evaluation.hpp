#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dras/dataset.hpp"
#include "dras/model.hpp"
#include "dras/nn/network.hpp"
#include "dras/rng.hpp"

namespace dras {

// --- age-group classifiers ----------------------------------------------------

// Judges which age group a synthesized 128 x 128 image belongs to.
// `reference_group` is the group of the age reference the image was
// synthesized from; only the oracle reads it.
class AgeGroupClassifier {
 public:
  virtual ~AgeGroupClassifier() = default;
  virtual int classify(const Tensor<float>& image, int reference_group) = 0;
};

// Always answers the reference's group.
class OracleAgeClassifier final : public AgeGroupClassifier {
 public:
  int classify(const Tensor<float>&, int reference_group) override { return reference_group; }
};

// Uniform over `groups`, seeded.
class RandomAgeClassifier final : public AgeGroupClassifier {
 public:
  explicit RandomAgeClassifier(std::uint64_t seed, int groups = kAgeGroups) : rng_(seed), groups_(groups) {}
  int classify(const Tensor<float>&, int) override { return static_cast<int>(rng_.below(static_cast<std::uint64_t>(groups_))); }

 private:
  Rng rng_;
  int groups_;
};

// Small convnet over 128 x 128 images: four stride-2 conv blocks then a linear
// layer to group logits.
class ConvAgeClassifier final : public AgeGroupClassifier {
 public:
  static constexpr const char* kBlobPrefix = "classifier.";

  explicit ConvAgeClassifier(std::uint64_t seed, int groups = kAgeGroups);

  int classify(const Tensor<float>& image, int reference_group) override;
  Matrix<float> logits(const Tensor<float>& images) const { return net_.forward(images).data; }
  std::vector<int> predict(const Tensor<float>& images) const;

  int groups() const { return groups_; }
  nn::Network<float>& network() { return net_; }
  const nn::Network<float>& network() const { return net_; }

  void save(const std::filesystem::path& path) const;
  // Throws MissingClassifier when the file is absent.
  static ConvAgeClassifier load(const std::filesystem::path& path, int groups = kAgeGroups);

 private:
  nn::Network<float> net_;
  int groups_;
};

// Mean softmax cross-entropy and its gradient with respect to the logits.
double softmax_cross_entropy(const Matrix<float>& logits, const std::vector<int>& labels,
                             Matrix<float>* grad = nullptr);

struct ClassifierTrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Returns the mean loss of each epoch.
std::vector<double> train_age_classifier(ConvAgeClassifier& clf, const ImageSet& data,
                                         const ClassifierTrainConfig& cfg);

// --- age-group preservation accuracy ---------------------------------------

struct AgeAccuracyTable {
  std::map<int, double> per_group;
  double average = 0;
};

// One age reference (1 x 3 x 224 x 224) per group.
using AgeReferences = std::map<int, Tensor<float>>;

// First record of each group, in record order. Throws MissingReference when a
// group has no record.
std::vector<std::size_t> select_age_references(const std::vector<ImageRecord>& records, int groups = kAgeGroups);

// Every test identity image (n x 3 x 128 x 128) is synthesized with every age
// reference; a group's accuracy is the fraction of its syntheses classified
// into that group. Throws MissingReference, MissingClassifier.
AgeAccuracyTable age_group_accuracy(const DrasModel& model, const Tensor<float>& test_images,
                                    const AgeReferences& age_refs, AgeGroupClassifier* classifier,
                                    int groups = kAgeGroups);

// `age_group,label,accuracy` rows followed by an `average` row.
void write_accuracy_table(const std::filesystem::path& path, const AgeAccuracyTable& table);

// --- identity features -------------------------------------------------------

struct FeatureRow {
  std::string identity;
  int age = 0;
  bool is_synthesized = false;
  Vector<float> features;
};

// One row per record, in order. `synthesized` flags rows per record (all false
// when empty). Throws MissingIdentityTags.
std::vector<FeatureRow> export_identity_features(const DrasModel& model, const ImageSet& data,
                                                 const std::vector<bool>& synthesized = {});

// `identity,age,is_synthesized,f0..f{z_dim-1}`.
void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows);

// --- verification ------------------------------------------------------------------

inline constexpr double kDefaultVerificationThreshold = 73.975;

// 50 · (cos + 1), computed in double; a zero vector scores 50.
double cosine_confidence(const Vector<float>& a, const Vector<float>& b);

class VerificationClient {
 public:
  virtual ~VerificationClient() = default;

  // a, b: single 1 x 3 x 128 x 128 images. Returns a confidence in [0, 100].
  virtual double confidence(const Tensor<float>& a, const Tensor<float>& b) = 0;

  // Confidence of every (a[i], b[j]); row i, column j.
  virtual Matrix<double> pairwise(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b);

  double threshold = kDefaultVerificationThreshold;
};

// Cosine similarity of identity-agent features.
class LocalCosineClient final : public VerificationClient {
 public:
  explicit LocalCosineClient(IdentityEncoder<float> encoder) : encoder_(std::move(encoder)) {}
  double confidence(const Tensor<float>& a, const Tensor<float>& b) override;
  Matrix<double> pairwise(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) override;

 private:
  IdentityEncoder<float> encoder_;
};

struct HttpClientOptions {
  std::string endpoint;  // http://host:port/path
  int retries = 3;
  int timeout_seconds = 10;
  int backoff_ms = 200;
};

// POSTs {"image_a": base64 PNG, "image_b": base64 PNG} and reads
// {"confidence": real}. Throws ServiceUnavailable after the retries run out.
class HttpVerificationClient final : public VerificationClient {
 public:
  explicit HttpVerificationClient(HttpClientOptions opt);
  double confidence(const Tensor<float>& a, const Tensor<float>& b) override;

 private:
  HttpClientOptions opt_;
  std::string host_;
  std::string path_;
};

// --- identity consistency ------------------------------------------------------

struct ConsistencyCell {
  double mean = 0;
  double stddev = 0;
  std::size_t pairs = 0;
};

struct ConsistencyMatrix {
  std::map<std::pair<int, int>, ConsistencyCell> entries;  // i < j only
  std::map<int, ConsistencyCell> group_average;
};

// For every i < j, verification confidence over pairs (a in sets[i], b in
// sets[j]). When max_pairs > 0 and a cell has more cross pairs, max_pairs of
// them are drawn uniformly with a generator seeded by `seed`. Group averages
// pool every cross pair involving the group. Throws EmptyGroup.
ConsistencyMatrix identity_consistency_matrix(const std::map<int, std::vector<Tensor<float>>>& sets,
                                              VerificationClient& client, std::size_t max_pairs = 0,
                                              std::uint64_t seed = 0);

// Synthesizes every test identity image with every age reference, keyed by the
// reference's group.
std::map<int, std::vector<Tensor<float>>> synthesize_group_sets(const DrasModel& model,
                                                                const Tensor<float>& test_images,
                                                                const AgeReferences& age_refs);

// `group_i,group_j,mean,std,pairs` rows followed by `average` rows per group.
void write_consistency_table(const std::filesystem::path& path, const ConsistencyMatrix& m);

}  // namespace dras
