#include "lda/balance.hpp"

#include <algorithm>
#include <cmath>

#include "lda/error.hpp"

namespace lda {

BalanceState::BalanceState(std::size_t window, double gamma)
    : window_(window), gamma_(gamma) {
  if (window < 1) throw ConfigError("balance: window must be >= 1");
  if (gamma < 0.0) throw ConfigError("balance: gamma must be >= 0");
}

double BalanceState::alpha_for(double delta_acc, double gamma) {
  const double clamped = std::clamp(delta_acc, 0.0, 1.0);
  if (clamped == 0.0) return 0.0;  // covers the 0^0 convention
  return std::pow(clamped, gamma);
}

double BalanceState::update(const Tensor& logits_b, const Tensor& logits_u,
                            std::span<const int> labels) {
  if (logits_b.rank() != 2 || logits_u.rank() != 2 ||
      logits_b.shape() != logits_u.shape() ||
      logits_b.rows() != labels.size()) {
    throw ShapeError("balance: logits " + shape_to_string(logits_b.shape()) +
                     " / " + shape_to_string(logits_u.shape()) +
                     " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t c = logits_b.cols();
  BatchStats stats{0, 0, labels.size()};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pred_b =
        argmax_row({logits_b.values().data() + i * c, c});
    const auto pred_u =
        argmax_row({logits_u.values().data() + i * c, c});
    if (static_cast<int>(pred_b) == labels[i]) ++stats.correct_balanced;
    if (static_cast<int>(pred_u) == labels[i]) ++stats.correct_unbalanced;
  }
  stats_.push_back(stats);
  while (stats_.size() > window_) stats_.pop_front();

  std::size_t total = 0;
  // errors_h - errors_h' collapses to correct_h' - correct_h.
  long long gap = 0;
  for (const BatchStats& s : stats_) {
    total += s.samples;
    gap += static_cast<long long>(s.correct_unbalanced) -
           static_cast<long long>(s.correct_balanced);
  }
  delta_acc_ = std::clamp(
      static_cast<double>(gap) / static_cast<double>(total), 0.0, 1.0);
  alpha_ = alpha_for(delta_acc_, gamma_);
  return alpha_;
}

FixedAlpha::FixedAlpha(double value) : value_(value) {
  if (value < 0.0) throw ConfigError("fixed alpha must be >= 0");
}

}  // namespace lda
