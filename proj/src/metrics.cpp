#include "lda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lda/error.hpp"

namespace lda {

namespace {

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

double plain_cosine(const double* a, const double* b, std::size_t dim) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na < kEpsNorm * kEpsNorm || nb < kEpsNorm * kEpsNorm) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

ShotSplit classify_split(std::size_t train_count, const SplitSpec& spec) {
  if (train_count > spec.many_threshold) return ShotSplit::many;
  if (train_count < spec.few_threshold) return ShotSplit::few;
  return ShotSplit::medium;
}

EvalReport evaluate(const LdaModel& model, const LongTailDataset& dataset,
                    const SplitSpec& spec) {
  const auto test = dataset.test_rows();
  if (test.empty()) throw UndefinedMetricError("evaluate: test split is empty");

  std::vector<double> features;
  features.reserve(test.size() * dataset.dim);
  for (std::size_t i : test) {
    const auto r = dataset.row(i);
    features.insert(features.end(), r.begin(), r.end());
  }
  const std::vector<int> predictions = model.predict(features, test.size());

  EvalReport report;
  report.num_classes = dataset.num_classes;
  report.confusion.assign(dataset.num_classes * dataset.num_classes, 0);

  std::size_t hits = 0;
  std::size_t split_total[3] = {0, 0, 0};
  std::size_t split_hits[3] = {0, 0, 0};
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto truth = static_cast<std::size_t>(dataset.labels[test[k]]);
    const auto pred = static_cast<std::size_t>(predictions[k]);
    ++report.confusion[truth * dataset.num_classes + pred];
    const auto split =
        static_cast<std::size_t>(classify_split(dataset.class_counts[truth], spec));
    ++split_total[split];
    if (pred == truth) {
      ++hits;
      ++split_hits[split];
    }
  }
  report.accuracy.overall = static_cast<double>(hits) / static_cast<double>(test.size());
  auto split_value = [&](ShotSplit s) -> std::optional<double> {
    const auto idx = static_cast<std::size_t>(s);
    if (split_total[idx] == 0) return std::nullopt;
    return static_cast<double>(split_hits[idx]) /
           static_cast<double>(split_total[idx]);
  };
  report.accuracy.many = split_value(ShotSplit::many);
  report.accuracy.medium = split_value(ShotSplit::medium);
  report.accuracy.few = split_value(ShotSplit::few);
  return report;
}

namespace {

std::vector<double> column_norms(const Tensor& weight) {
  const std::size_t rows = weight.rows(), cols = weight.cols();
  std::vector<double> norms(cols, 0.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = weight.at(r, c);
      acc += v * v;
    }
    norms[c] = std::sqrt(acc);
  }
  return norms;
}

double coefficient_of_variation(std::span<const double> values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return mean == 0.0 ? 0.0 : std::sqrt(var) / mean;
}

}  // namespace

WeightNormReport weight_norms(const LdaModel& model) {
  WeightNormReport report;
  report.balanced = column_norms(model.head_balanced().weight);
  report.cv_balanced = coefficient_of_variation(report.balanced);
  if (model.kind() == ModelKind::lda) {
    report.unbalanced = column_norms(model.head_unbalanced().weight);
    report.cv_unbalanced = coefficient_of_variation(report.unbalanced);
  }
  return report;
}

std::vector<double> regularized_features(const LdaModel& model,
                                         std::span<const double> features,
                                         std::size_t num_rows,
                                         std::size_t* out_dim) {
  Tensor x = Tensor::constant({num_rows, model.dims().input},
                              {features.begin(), features.end()});
  Tensor rep = x;
  for (const AffineLayer& layer : model.encoder())
    rep = relu(add(matmul(rep, layer.weight), layer.bias));
  Tensor out = rep;
  if (model.kind() == ModelKind::lda) {
    out = add(matmul(rep, model.projection().weight), model.projection().bias);
  }
  if (out_dim != nullptr) *out_dim = out.cols();
  return out.values();
}

double intra_inter_ratio(const LdaModel& model,
                         const LongTailDataset& dataset) {
  const auto test = dataset.test_rows();
  if (test.empty()) throw UndefinedMetricError("ratio: test split is empty");

  std::vector<double> raw;
  raw.reserve(test.size() * dataset.dim);
  std::vector<int> labels;
  for (std::size_t i : test) {
    const auto r = dataset.row(i);
    raw.insert(raw.end(), r.begin(), r.end());
    labels.push_back(dataset.labels[i]);
  }
  std::size_t dim = 0;
  const std::vector<double> proj =
      regularized_features(model, raw, test.size(), &dim);

  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t k = 0; k < labels.size(); ++k)
    by_class[static_cast<std::size_t>(labels[k])].push_back(k);

  std::vector<std::vector<double>> centers;
  std::vector<double> intra;
  for (const auto& members : by_class) {
    if (members.empty()) continue;
    std::vector<double> center(dim, 0.0);
    for (std::size_t k : members)
      for (std::size_t j = 0; j < dim; ++j) center[j] += proj[k * dim + j];
    for (double& v : center) v /= static_cast<double>(members.size());
    double acc = 0.0;
    for (std::size_t k : members)
      acc += 1.0 - plain_cosine(&proj[k * dim], center.data(), dim);
    intra.push_back(acc / static_cast<double>(members.size()));
    centers.push_back(std::move(center));
  }
  if (centers.size() < 2) {
    throw UndefinedMetricError("ratio: needs at least two classes in the test split");
  }
  double inter_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      inter_sum += 1.0 - plain_cosine(centers[i].data(), centers[j].data(), dim);
      ++pairs;
    }
  }
  const double inter_mean = inter_sum / static_cast<double>(pairs);
  if (inter_mean == 0.0) {
    throw UndefinedMetricError("ratio: all class centers coincide");
  }
  double intra_mean = 0.0;
  for (double v : intra) intra_mean += v;
  intra_mean /= static_cast<double>(intra.size());
  return intra_mean / inter_mean;
}

double mmd_squared(std::span<const double> x, std::span<const double> y,
                   std::size_t dim, double sigma) {
  const std::size_t m = x.size() / dim, n = y.size() / dim;
  if (m == 0 || n == 0) throw UndefinedMetricError("mmd: empty sample set");
  const double denom = 2.0 * sigma * sigma;
  auto kernel_mean = [&](std::span<const double> a, std::span<const double> b,
                         std::size_t na, std::size_t nb) {
    double acc = 0.0;
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t j = 0; j < nb; ++j)
        acc += std::exp(-squared_distance(&a[i * dim], &b[j * dim], dim) / denom);
    return acc / (static_cast<double>(na) * static_cast<double>(nb));
  };
  return kernel_mean(x, x, m, m) + kernel_mean(y, y, n, n) -
         2.0 * kernel_mean(x, y, m, n);
}

double median_bandwidth(std::span<const double> x, std::span<const double> y,
                        std::size_t dim) {
  std::vector<double> all(x.begin(), x.end());
  all.insert(all.end(), y.begin(), y.end());
  const std::size_t n = all.size() / dim;
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dists.push_back(std::sqrt(squared_distance(&all[i * dim], &all[j * dim], dim)));
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double median = dists[dists.size() / 2];
  return median > 0.0 ? median : 1.0;
}

CddResult contrastive_domain_divergence(std::span<const double> features_train,
                                        std::span<const int> labels_train,
                                        std::span<const double> features_test,
                                        std::span<const int> labels_test,
                                        std::size_t dim,
                                        std::size_t num_classes) {
  if (labels_train.empty() || labels_test.empty()) {
    throw UndefinedMetricError("cdd: empty domain");
  }
  auto group = [&](std::span<const double> feats, std::span<const int> labels) {
    std::vector<std::vector<double>> per_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      per_class[c].insert(per_class[c].end(), feats.begin() + i * dim,
                          feats.begin() + (i + 1) * dim);
    }
    return per_class;
  };
  const auto train = group(features_train, labels_train);
  const auto test = group(features_test, labels_test);

  std::vector<std::size_t> usable;
  std::size_t skipped = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (train[c].empty() || test[c].empty()) {
      ++skipped;
    } else {
      usable.push_back(c);
    }
  }
  if (usable.size() < 2) {
    throw UndefinedMetricError("cdd: fewer than two classes present on both sides");
  }
  const double sigma = median_bandwidth(features_train, features_test, dim);

  double intra = 0.0;
  for (std::size_t c : usable) intra += mmd_squared(train[c], test[c], dim, sigma);
  intra /= static_cast<double>(usable.size());

  double inter = 0.0;
  for (std::size_t a : usable)
    for (std::size_t b : usable)
      if (a != b) inter += mmd_squared(train[a], test[b], dim, sigma);
  inter /= static_cast<double>(usable.size() * (usable.size() - 1));

  return {intra - inter, skipped};
}

CddResult cdd_of_dataset(const LdaModel& model, const LongTailDataset& dataset) {
  auto collect = [&](SplitTag tag, std::vector<int>& labels) {
    std::vector<double> raw;
    for (std::size_t i = 0; i < dataset.num_rows(); ++i) {
      if (dataset.split[i] != tag) continue;
      const auto r = dataset.row(i);
      raw.insert(raw.end(), r.begin(), r.end());
      labels.push_back(dataset.labels[i]);
    }
    return raw;
  };
  std::vector<int> labels_train, labels_test;
  const std::vector<double> raw_train = collect(SplitTag::train, labels_train);
  const std::vector<double> raw_test = collect(SplitTag::test, labels_test);
  std::size_t dim = 0;
  const std::vector<double> feats_train =
      regularized_features(model, raw_train, labels_train.size(), &dim);
  const std::vector<double> feats_test =
      regularized_features(model, raw_test, labels_test.size(), &dim);
  return contrastive_domain_divergence(feats_train, labels_train, feats_test,
                                       labels_test, dim, dataset.num_classes);
}

void export_weights(const LdaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t rep = model.dims().rep;
  out << "classifier,class";
  for (std::size_t j = 0; j < rep; ++j) out << ",w_" << j;
  out << "\n";
  auto write_head = [&](const char* tag, const AffineLayer& layer) {
    for (std::size_t c = 0; c < model.dims().classes; ++c) {
      out << tag << "," << c;
      for (std::size_t r = 0; r < rep; ++r)
        out << "," << format_double(layer.weight.at(r, c));
      out << "\n";
    }
  };
  write_head("h", model.head_balanced());
  if (model.kind() == ModelKind::lda) write_head("h_prime", model.head_unbalanced());
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace lda
