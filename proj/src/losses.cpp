#include "lda/losses.hpp"

#include <algorithm>
#include <map>

#include "lda/error.hpp"

namespace lda {

ClassWeights ClassWeights::from_counts(std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  ClassWeights weights;
  weights.w.reserve(counts.size());
  for (std::size_t c : counts) {
    if (c == 0) {
      throw ConfigError("class weights: empty class has undefined weight 1/p_u");
    }
    weights.w.push_back(static_cast<double>(total) / static_cast<double>(c));
  }
  return weights;
}

ClassWeights ClassWeights::uniform(std::size_t num_classes, double value) {
  ClassWeights weights;
  weights.w.assign(num_classes, value);
  return weights;
}

Tensor unbalanced_risk(const Tensor& logits, std::span<const int> labels) {
  return scale(mean(gather(log_softmax(logits), labels)), -1.0);
}

Tensor balanced_risk(const Tensor& logits, std::span<const int> labels,
                     const ClassWeights& weights) {
  std::vector<double> per_sample(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 ||
        static_cast<std::size_t>(labels[i]) >= weights.num_classes()) {
      throw LabelError("balanced_risk: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(weights.num_classes()) +
                       ")");
    }
    per_sample[i] = weights.w[static_cast<std::size_t>(labels[i])];
  }
  Tensor w = Tensor::constant({labels.size()}, std::move(per_sample));
  Tensor picked = gather(log_softmax(logits), labels);
  return scale(sum(mul(w, picked)),
               -1.0 / static_cast<double>(labels.size()));
}

BatchCenters compute_centers(const Tensor& proj, std::span<const int> labels) {
  if (proj.rank() != 2 || proj.rows() != labels.size()) {
    throw ShapeError("compute_centers: projections " +
                     shape_to_string(proj.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i)
    groups[labels[i]].push_back(i);

  BatchCenters centers;
  centers.member_rows.resize(labels.size());
  for (auto& [cls, rows] : groups) {
    centers.classes.push_back(cls);
    centers.centers.push_back(mean_rows(proj, rows));
    for (std::size_t i : rows) centers.member_rows[i] = row(proj, i);
    centers.members.push_back(std::move(rows));
  }
  return centers;
}

Tensor intra_loss(const BatchCenters& centers) {
  if (centers.present() == 0) {
    throw ShapeError("intra_loss: no classes present");
  }
  Tensor total;
  for (std::size_t c = 0; c < centers.present(); ++c) {
    const auto& members = centers.members[c];
    Tensor class_sum;
    for (std::size_t i : members) {
      Tensor dist = sub(Tensor::scalar(1.0),
                        cosine(centers.member_rows[i], centers.centers[c]));
      class_sum = class_sum.defined() ? add(class_sum, dist) : dist;
    }
    Tensor class_mean =
        scale(class_sum, 1.0 / static_cast<double>(members.size()));
    total = total.defined() ? add(total, class_mean) : class_mean;
  }
  return scale(total, 1.0 / static_cast<double>(centers.present()));
}

Tensor inter_loss(const BatchCenters& centers, const ClassWeights& weights,
                  double margin) {
  if (margin <= 0.0 || margin > 2.0) {
    throw ConfigError("inter_loss: margin must lie in (0, 2], got " +
                      std::to_string(margin));
  }
  Tensor total;
  for (std::size_t i = 0; i < centers.present(); ++i) {
    for (std::size_t j = 0; j < centers.present(); ++j) {
      if (i == j) continue;
      const auto ci = static_cast<std::size_t>(centers.classes[i]);
      const auto cj = static_cast<std::size_t>(centers.classes[j]);
      if (ci >= weights.num_classes() || cj >= weights.num_classes()) {
        throw LabelError("inter_loss: class id outside weight table");
      }
      // max(0, margin - (1 - cos)) = relu(cos + margin - 1)
      Tensor hinge = relu(add_scalar(cosine(centers.centers[i],
                                            centers.centers[j]),
                                     margin - 1.0));
      Tensor term = scale(hinge, weights.w[ci] + weights.w[cj]);
      total = total.defined() ? add(total, term) : term;
    }
  }
  if (!total.defined()) return Tensor::scalar(0.0);  // fewer than two classes
  return total;
}

TotalLoss total_loss(const Tensor& eps_u, const Tensor& eps_b,
                     const Tensor& l_intra, const Tensor& l_inter,
                     double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) {
    throw ConfigError("total_loss: alpha and beta must be >= 0");
  }
  TotalLoss out;
  out.breakdown.eps_u = eps_u.value();
  out.breakdown.eps_b = eps_b.defined() ? eps_b.value() : 0.0;
  out.breakdown.l_intra = l_intra.defined() ? l_intra.value() : 0.0;
  out.breakdown.l_inter = l_inter.defined() ? l_inter.value() : 0.0;
  out.breakdown.alpha = alpha;
  out.breakdown.beta = beta;
  out.value = eps_u;
  if (alpha > 0.0 && eps_b.defined()) {
    out.value = add(out.value, scale(eps_b, alpha));
  }
  if (beta > 0.0 && (l_intra.defined() || l_inter.defined())) {
    Tensor reg = l_intra.defined() ? l_intra : l_inter;
    if (l_intra.defined() && l_inter.defined()) reg = add(l_intra, l_inter);
    out.value = add(out.value, scale(reg, beta));
  }
  out.breakdown.total = out.breakdown.eps_u + alpha * out.breakdown.eps_b +
                        beta * (out.breakdown.l_intra + out.breakdown.l_inter);
  return out;
}

}  // namespace lda
