#pragma once

#include <cstddef>
#include <deque>
#include <span>

#include "lda/tensor.hpp"

namespace lda {

// Self-adaptive balance factor. Tracks per-batch correctness of the balanced
// and unbalanced classifiers over a sliding window of W batches and produces
// alpha = clamp(delta_acc, 0, 1)^gamma, where delta_acc is the window-mean
// error-rate gap of h relative to h'. 0^0 is defined as 0 here, so gamma = 0
// still yields alpha = 0 when the classifiers agree.
class BalanceState {
 public:
  BalanceState(std::size_t window, double gamma);

  // Pushes this batch's argmax correctness counts (evicting batches older
  // than the window) and returns the recomputed alpha.
  double update(const Tensor& logits_b, const Tensor& logits_u,
                std::span<const int> labels);

  double alpha() const { return alpha_; }
  double delta_acc() const { return delta_acc_; }
  double gamma() const { return gamma_; }
  std::size_t window() const { return window_; }
  std::size_t batches_seen() const { return stats_.size(); }

  // alpha for a given clamped-gap value; exposed so hand-computed values are
  // checkable without driving batches through the window.
  static double alpha_for(double delta_acc, double gamma);

 private:
  struct BatchStats {
    std::size_t correct_balanced;
    std::size_t correct_unbalanced;
    std::size_t samples;
  };
  std::deque<BatchStats> stats_;
  std::size_t window_;
  double gamma_;
  double alpha_ = 0.0;
  double delta_acc_ = 0.0;
};

// Constant alpha for grid-search ablation runs.
class FixedAlpha {
 public:
  explicit FixedAlpha(double value);
  double value() const { return value_; }

 private:
  double value_;
};

}  // namespace lda
