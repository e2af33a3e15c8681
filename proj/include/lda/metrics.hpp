#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lda/data.hpp"
#include "lda/model.hpp"

namespace lda {

// Class grouping by training count: many (> many_threshold), few
// (< few_threshold), medium in between. Defaults follow the >100 / 20-100
// / <20 convention; desk-scale datasets may rescale them.
struct SplitSpec {
  std::size_t many_threshold = 100;
  std::size_t few_threshold = 20;
};

enum class ShotSplit { many, medium, few };

ShotSplit classify_split(std::size_t train_count, const SplitSpec& spec);

struct Accuracies {
  double overall = 0.0;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
};

struct EvalReport {
  Accuracies accuracy;
  std::vector<std::size_t> confusion;  // row-major C x C, row = true class
  std::size_t num_classes = 0;
};

// Top-1 accuracy of predict() over the balanced test split, grouped by the
// sample's class training count. Split accuracies are sample means within
// the split; an empty split reports absent, not zero.
EvalReport evaluate(const LdaModel& model, const LongTailDataset& dataset,
                    const SplitSpec& spec);

struct WeightNormReport {
  std::vector<double> balanced;             // |w_c| per class of h
  std::vector<double> unbalanced;           // |w_c| per class of h' (lda only)
  double cv_balanced = 0.0;                 // coefficient of variation
  std::optional<double> cv_unbalanced;
};

WeightNormReport weight_norms(const LdaModel& model);

// Features in the space the self-regularization acts on: the projection
// head's output for lda models, the encoder representation for baselines.
std::vector<double> regularized_features(const LdaModel& model,
                                         std::span<const double> features,
                                         std::size_t num_rows,
                                         std::size_t* out_dim = nullptr);

// mean_c d_intra^c / mean_{i != j} d_inter^{ij} over the test split, computed
// in the regularized feature space. Raises UndefinedMetricError for a single
// class or coincident centers.
double intra_inter_ratio(const LdaModel& model, const LongTailDataset& dataset);

// Biased (V-statistic) Gaussian-kernel MMD^2: zero for identical sets.
double mmd_squared(std::span<const double> x, std::span<const double> y,
                   std::size_t dim, double sigma);

// Median of pairwise distances over the union of both sets; 1.0 fallback
// when every point coincides.
double median_bandwidth(std::span<const double> x, std::span<const double> y,
                        std::size_t dim);

struct CddResult {
  double value = 0.0;
  std::size_t skipped_classes = 0;  // absent on either side
};

// Contrastive domain divergence: mean same-class MMD^2 across domains minus
// mean cross-class MMD^2.
CddResult contrastive_domain_divergence(std::span<const double> features_train,
                                        std::span<const int> labels_train,
                                        std::span<const double> features_test,
                                        std::span<const int> labels_test,
                                        std::size_t dim,
                                        std::size_t num_classes);

// CDD of train-vs-test features in the regularized feature space.
CddResult cdd_of_dataset(const LdaModel& model, const LongTailDataset& dataset);

// One CSV row per class and classifier (h, then h' for lda models) with the
// raw weight vector, for external embedding tools.
void export_weights(const LdaModel& model, const std::filesystem::path& path);

}  // namespace lda
