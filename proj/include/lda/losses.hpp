#pragma once

#include <span>
#include <vector>

#include "lda/tensor.hpp"

namespace lda {

// Per-class inverse-frequency weights w[c] = 1 / p_u(c). For a balanced
// dataset every entry equals the class count C.
struct ClassWeights {
  std::vector<double> w;

  static ClassWeights from_counts(std::span<const std::size_t> counts);
  static ClassWeights uniform(std::size_t num_classes, double value = 1.0);
  std::size_t num_classes() const { return w.size(); }
};

// Feature centers of the classes present in one mini-batch, kept on the tape
// so gradients flow through the members into each center.
struct BatchCenters {
  std::vector<int> classes;                       // present class ids, ascending
  std::vector<Tensor> centers;                    // mean projected feature
  std::vector<std::vector<std::size_t>> members;  // batch row indices per class
  std::vector<Tensor> member_rows;                // row views, batch order

  std::size_t present() const { return classes.size(); }
};

// Scalar view of one training step's objective. total satisfies
// eps_u + alpha*eps_b + beta*(l_intra + l_inter) exactly.
struct LossBreakdown {
  double eps_u = 0.0;
  double eps_b = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  Tensor value;  // tape scalar; terms with a zero coefficient are omitted
  LossBreakdown breakdown;
};

// Mean cross entropy of the true labels (the unbalanced empirical risk).
Tensor unbalanced_risk(const Tensor& logits, std::span<const int> labels);

// (1/N) * sum_i w[y_i] * CE_i — the importance-weighted balanced risk. The
// 1/N normalization is by batch size, not by the weight sum.
Tensor balanced_risk(const Tensor& logits, std::span<const int> labels,
                     const ClassWeights& weights);

BatchCenters compute_centers(const Tensor& proj, std::span<const int> labels);

// Mean over present classes of the mean member-to-center cosine distance.
Tensor intra_loss(const BatchCenters& centers);

// Hinge-margin repulsion over ordered pairs of present class centers,
// weighted by w_i + w_j. Margin must lie in (0, 2].
Tensor inter_loss(const BatchCenters& centers, const ClassWeights& weights,
                  double margin);

TotalLoss total_loss(const Tensor& eps_u, const Tensor& eps_b,
                     const Tensor& l_intra, const Tensor& l_inter,
                     double alpha, double beta);

}  // namespace lda
