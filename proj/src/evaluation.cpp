#include "dras/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dras/csv.hpp"
#include "dras/image_io.hpp"
#include "dras/param_blob.hpp"

namespace dras {

namespace {

constexpr Index kSynthesisChunk = 16;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

Matrix<float> repeat_columns(const Matrix<float>& col, Index n) { return col.replicate(1, n); }

// Calls fn(group, first_test_index, synthesized_chunk) for every group and chunk.
template <typename Fn>
void for_each_synthesis(const DrasModel& model, const Tensor<float>& test_images, const AgeReferences& age_refs,
                        Fn&& fn) {
  std::map<int, Matrix<float>> age_codes;
  for (const auto& [group, ref] : age_refs) age_codes.emplace(group, model.e_a.encode(ref));
  for (Index first = 0; first < test_images.n; first += kSynthesisChunk) {
    const Index count = std::min(kSynthesisChunk, test_images.n - first);
    const Matrix<float> z = model.e_i.encode(slice(test_images, first, count));
    for (const auto& [group, a] : age_codes)
      fn(group, first, model.g.generate(compose_joint_feature(z, repeat_columns(a, count))));
  }
}

struct Summary {
  double mean = 0;
  double stddev = 0;
};

// Sorting first makes the result independent of the enumeration order.
Summary summarize(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

}  // namespace

// --- classifiers ------------------------------------------------------------------

ConvAgeClassifier::ConvAgeClassifier(std::uint64_t seed, int groups) : groups_(groups) {
  using namespace nn;
  Rng rng(seed);
  const Index widths[] = {3, 8, 16, 32, 32};
  for (int b = 0; b < 4; ++b) {
    net_.emplace<Conv2d<float>>(widths[b], widths[b + 1], 4, 2, 1, rng);
    net_.emplace<Pointwise<float>>(Activation::LeakyRelu);
  }
  net_.emplace<Flatten<float>>();
  net_.emplace<Linear<float>>(8 * 8 * widths[4], groups, rng);
}

std::vector<int> ConvAgeClassifier::predict(const Tensor<float>& images) const {
  const Matrix<float> l = logits(images);
  std::vector<int> out(static_cast<std::size_t>(l.cols()));
  for (Index k = 0; k < l.cols(); ++k) l.col(k).maxCoeff(&out[static_cast<std::size_t>(k)]);
  return out;
}

int ConvAgeClassifier::classify(const Tensor<float>& image, int) { return predict(image).front(); }

void ConvAgeClassifier::save(const std::filesystem::path& path) const {
  ParamBlob blob;
  export_network(net_, kBlobPrefix, blob);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_blob(path, blob);
}

ConvAgeClassifier ConvAgeClassifier::load(const std::filesystem::path& path, int groups) {
  if (!std::filesystem::is_regular_file(path)) throw Error(Errc::MissingClassifier, "no classifier at " + path.string());
  ConvAgeClassifier clf(0, groups);
  import_network(clf.net_, kBlobPrefix, read_blob(path));
  return clf;
}

double softmax_cross_entropy(const Matrix<float>& logits, const std::vector<int>& labels, Matrix<float>* grad) {
  if (static_cast<Index>(labels.size()) != logits.cols())
    throw Error(Errc::LengthMismatch, "one label per logit column required");
  const auto n = static_cast<double>(logits.cols());
  if (grad) grad->resize(logits.rows(), logits.cols());
  double loss = 0;
  for (Index k = 0; k < logits.cols(); ++k) {
    const int y = labels[static_cast<std::size_t>(k)];
    if (y < 0 || y >= logits.rows()) throw Error(Errc::InvalidComponent, "label out of range");
    const Vector<double> l = logits.col(k).cast<double>();
    const double m = l.maxCoeff();
    const Vector<double> e = (l.array() - m).exp().matrix();
    const double z = e.sum();
    loss += std::log(z) + m - l(y);
    if (grad) {
      Vector<double> g = e / z;
      g(y) -= 1.0;
      grad->col(k) = (g / n).cast<float>();
    }
  }
  return loss / n;
}

std::vector<double> train_age_classifier(ConvAgeClassifier& clf, const ImageSet& data,
                                         const ClassifierTrainConfig& cfg) {
  if (data.size() == 0) throw Error(Errc::EmptyDataset, "no classifier training images");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.lr > 0))
    throw Error(Errc::InvalidConfig, "classifier training needs batch_size >= 1, epochs >= 0, lr > 0");
  nn::Adam<float> opt(clf.network(), nn::Adam<float>::Options{0.9, 0.999, 1e-8});
  Rng rng(cfg.seed);
  std::vector<double> history;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = rng.permutation(data.size());
    double sum = 0;
    std::size_t steps = 0;
    for (std::size_t first = 0; first < order.size(); first += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(first + batch, order.size())));
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.records[i].age_group);
      nn::Network<float>::Trace t;
      const Matrix<float> l = clf.network().forward(data.identity_batch(idx), t).data;
      Matrix<float> dl;
      sum += softmax_cross_entropy(l, labels, &dl);
      ++steps;
      auto grads = clf.network().zero_grads();
      clf.network().backward(t, Tensor<float>::features(std::move(dl)), &grads, false);
      opt.step(clf.network(), grads, cfg.lr);
    }
    history.push_back(sum / static_cast<double>(steps));
  }
  return history;
}

// --- age accuracy -------------------------------------------------------------------

std::vector<std::size_t> select_age_references(const std::vector<ImageRecord>& records, int groups) {
  std::vector<std::size_t> out(static_cast<std::size_t>(groups), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int g = records[i].age_group;
    if (g >= 0 && g < groups && out[static_cast<std::size_t>(g)] == records.size()) out[static_cast<std::size_t>(g)] = i;
  }
  for (int g = 0; g < groups; ++g)
    if (out[static_cast<std::size_t>(g)] == records.size())
      throw Error(Errc::MissingReference, "no age reference for group " + std::to_string(g));
  return out;
}

AgeAccuracyTable age_group_accuracy(const DrasModel& model, const Tensor<float>& test_images,
                                    const AgeReferences& age_refs, AgeGroupClassifier* classifier, int groups) {
  if (!classifier) throw Error(Errc::MissingClassifier, "age-group accuracy needs a classifier");
  for (int g = 0; g < groups; ++g)
    if (!age_refs.count(g)) throw Error(Errc::MissingReference, "no age reference for group " + std::to_string(g));
  if (test_images.n == 0) throw Error(Errc::EmptyDataset, "no test images");
  AgeReferences refs;
  for (int g = 0; g < groups; ++g) refs.emplace(g, age_refs.at(g));

  std::map<int, std::size_t> hits;
  for_each_synthesis(model, test_images, refs, [&](int group, Index, const Tensor<float>& y) {
    for (Index k = 0; k < y.n; ++k)
      if (classifier->classify(slice(y, k, 1), group) == group) ++hits[group];
  });
  AgeAccuracyTable table;
  for (int g = 0; g < groups; ++g) {
    table.per_group[g] = static_cast<double>(hits[g]) / static_cast<double>(test_images.n);
    table.average += table.per_group[g];
  }
  table.average /= static_cast<double>(groups);
  return table;
}

void write_accuracy_table(const std::filesystem::path& path, const AgeAccuracyTable& table) {
  std::string out = "age_group,label,accuracy\n";
  for (const auto& [g, acc] : table.per_group) {
    const std::string label = g >= 0 && g < kAgeGroups ? std::string(age_group_label(g)) : std::to_string(g);
    out += std::to_string(g) + "," + label + "," + fmt(acc) + "\n";
  }
  out += "average,," + fmt(table.average) + "\n";
  write_text(path, out);
}

// --- identity features --------------------------------------------------------------

std::vector<FeatureRow> export_identity_features(const DrasModel& model, const ImageSet& data,
                                                 const std::vector<bool>& synthesized) {
  if (!synthesized.empty() && synthesized.size() != data.size())
    throw Error(Errc::LengthMismatch, "one synthesized flag per record required");
  for (const auto& r : data.records)
    if (!r.identity || r.identity->empty())
      throw Error(Errc::MissingIdentityTags, "record without identity: " + r.path.string());
  std::vector<FeatureRow> rows;
  rows.reserve(data.size());
  for (std::size_t first = 0; first < data.size(); first += kSynthesisChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(data.size(), first + kSynthesisChunk); ++i) idx.push_back(i);
    const Matrix<float> z = model.e_i.encode(data.identity_batch(idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& r = data.records[idx[k]];
      rows.push_back({*r.identity, r.age, !synthesized.empty() && synthesized[idx[k]], z.col(static_cast<Index>(k))});
    }
  }
  return rows;
}

void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows) {
  const Index dim = rows.empty() ? 0 : rows.front().features.size();
  std::string out = "identity,age,is_synthesized";
  for (Index k = 0; k < dim; ++k) out += ",f" + std::to_string(k);
  out += '\n';
  for (const auto& r : rows) {
    out += csv::escape(r.identity) + "," + std::to_string(r.age) + "," + (r.is_synthesized ? "1" : "0");
    for (Index k = 0; k < r.features.size(); ++k) out += "," + fmt(r.features(k));
    out += '\n';
  }
  write_text(path, out);
}

// --- verification ---------------------------------------------------------------------

double cosine_confidence(const Vector<float>& a, const Vector<float>& b) {
  if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "feature lengths differ");
  const Vector<double> x = a.cast<double>(), y = b.cast<double>();
  const double nx = x.squaredNorm(), ny = y.squaredNorm();
  if (nx == 0 || ny == 0) return 50.0;
  const double c = std::clamp(x.dot(y) / std::sqrt(nx * ny), -1.0, 1.0);
  return 50.0 * (c + 1.0);
}

Matrix<double> VerificationClient::pairwise(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
  Matrix<double> out(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = confidence(a[i], b[j]);
  return out;
}

double LocalCosineClient::confidence(const Tensor<float>& a, const Tensor<float>& b) {
  return cosine_confidence(encoder_.encode(a).col(0), encoder_.encode(b).col(0));
}

Matrix<double> LocalCosineClient::pairwise(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
  const Matrix<float> fa = a.empty() ? Matrix<float>() : encoder_.encode(stack(a));
  const Matrix<float> fb = b.empty() ? Matrix<float>() : encoder_.encode(stack(b));
  Matrix<double> out(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = cosine_confidence(fa.col(i), fb.col(j));
  return out;
}

HttpVerificationClient::HttpVerificationClient(HttpClientOptions opt) : opt_(std::move(opt)) {
  const std::string& url = opt_.endpoint;
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.substr(0, scheme) != "http")
    throw Error(Errc::UsageError, "endpoint must look like http://host:port/path: " + url);
  const auto slash = url.find('/', scheme + 3);
  host_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (opt_.retries < 0) throw Error(Errc::UsageError, "retries must be >= 0");
}

double HttpVerificationClient::confidence(const Tensor<float>& a, const Tensor<float>& b) {
  auto b64 = [](const Tensor<float>& t) {
    const auto png = encode_png(to_raw_image(t));
    return httplib::detail::base64_encode(std::string(png.begin(), png.end()));
  };
  const std::string body = nlohmann::json{{"image_a", b64(a)}, {"image_b", b64(b)}}.dump();
  std::string last_error = "no attempt";
  for (int attempt = 0; attempt <= opt_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opt_.backoff_ms << (attempt - 1)));
    httplib::Client cli(host_);
    cli.set_connection_timeout(opt_.timeout_seconds, 0);
    cli.set_read_timeout(opt_.timeout_seconds, 0);
    const auto res = cli.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const double c = nlohmann::json::parse(res->body).at("confidence").get<double>();
      if (!std::isfinite(c)) throw Error(Errc::ScoreOutOfRange, "non-finite confidence from service");
      return c;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("bad response: ") + e.what();
    }
  }
  throw Error(Errc::ServiceUnavailable, opt_.endpoint + ": " + last_error);
}

// --- consistency -----------------------------------------------------------------------

std::map<int, std::vector<Tensor<float>>> synthesize_group_sets(const DrasModel& model,
                                                                const Tensor<float>& test_images,
                                                                const AgeReferences& age_refs) {
  std::map<int, std::vector<Tensor<float>>> sets;
  for (const auto& [group, ref] : age_refs) sets[group];
  for_each_synthesis(model, test_images, age_refs, [&](int group, Index, const Tensor<float>& y) {
    for (Index k = 0; k < y.n; ++k) sets[group].push_back(slice(y, k, 1));
  });
  return sets;
}

ConsistencyMatrix identity_consistency_matrix(const std::map<int, std::vector<Tensor<float>>>& sets,
                                              VerificationClient& client, std::size_t max_pairs,
                                              std::uint64_t seed) {
  for (const auto& [g, s] : sets)
    if (s.empty()) throw Error(Errc::EmptyGroup, "no synthesized images for group " + std::to_string(g));
  ConsistencyMatrix m;
  std::map<int, std::vector<double>> pooled;
  for (auto i = sets.begin(); i != sets.end(); ++i)
    for (auto j = std::next(i); j != sets.end(); ++j) {
      const auto& a = i->second;
      const auto& b = j->second;
      std::vector<double> values;
      if (max_pairs == 0 || a.size() * b.size() <= max_pairs) {
        const Matrix<double> c = client.pairwise(a, b);
        values.assign(c.data(), c.data() + c.size());
      } else {
        Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(i->first) * 1000003ULL + static_cast<std::uint64_t>(j->first));
        for (std::size_t k = 0; k < max_pairs; ++k) {
          const auto x = static_cast<std::size_t>(rng.below(a.size()));
          const auto y = static_cast<std::size_t>(rng.below(b.size()));
          values.push_back(client.confidence(a[x], b[y]));
        }
      }
      const Summary s = summarize(values);
      m.entries[{i->first, j->first}] = {s.mean, s.stddev, values.size()};
      pooled[i->first].insert(pooled[i->first].end(), values.begin(), values.end());
      pooled[j->first].insert(pooled[j->first].end(), values.begin(), values.end());
    }
  for (const auto& [g, values] : pooled) {
    const Summary s = summarize(values);
    m.group_average[g] = {s.mean, s.stddev, values.size()};
  }
  return m;
}

void write_consistency_table(const std::filesystem::path& path, const ConsistencyMatrix& m) {
  std::string out = "group_i,group_j,mean,std,pairs\n";
  for (const auto& [key, c] : m.entries)
    out += std::to_string(key.first) + "," + std::to_string(key.second) + "," + fmt(c.mean) + "," + fmt(c.stddev) +
           "," + std::to_string(c.pairs) + "\n";
  for (const auto& [g, c] : m.group_average)
    out += std::to_string(g) + ",average," + fmt(c.mean) + "," + fmt(c.stddev) + "," + std::to_string(c.pairs) + "\n";
  write_text(path, out);
}

}  // namespace dras
