#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lda/balance.hpp"
#include "lda/data.hpp"
#include "lda/losses.hpp"
#include "lda/metrics.hpp"
#include "lda/model.hpp"

namespace lda {

// Training strategies: joint LDA objective with adaptive or fixed alpha, the
// plain cross-entropy and re-weighted baselines, and the two-stage
// classifier-retraining schemes (stage 2 freezes the encoder and fine-tunes
// the classifier with a small learning rate).
enum class Strategy { lda, ce, rw, ce_then_rw, ce_then_rs, lda_fixed_alpha };

std::string strategy_name(Strategy strategy);
Strategy strategy_from_name(const std::string& name);

enum class ScheduleKind { cosine, step };

struct TrainConfig {
  Strategy strategy = Strategy::lda;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr_base = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  ScheduleKind schedule = ScheduleKind::cosine;
  std::vector<std::size_t> milestones;  // epochs, for the step schedule
  double step_factor = 0.01;
  std::size_t warmup_epochs = 5;
  double gamma = 2.0;
  double beta = 1.0;
  double margin = 1.0;
  std::size_t window = 32;
  double alpha_fixed = 1.0;  // lda_fixed_alpha only
  // 0 resolves to 80% of epochs for the two-stage strategies.
  std::size_t stage_split_epoch = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t rep_dim = 32;
  std::size_t proj_dim = 0;  // 0 resolves to 2 * rep_dim
  SplitSpec split;
};

void validate(const TrainConfig& config, std::size_t train_size);
std::size_t resolve_stage_split(const TrainConfig& config);

// Momentum buffers for one parameter list.
class OptimizerState {
 public:
  explicit OptimizerState(const std::vector<Tensor>& params);
  std::vector<double>& buffer(std::size_t index) { return buffers_[index]; }
  std::size_t size() const { return buffers_.size(); }

 private:
  std::vector<std::vector<double>> buffers_;
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// A missing gradient counts as zero; a non-finite one aborts with a
// DivergenceError carrying the step index.
void sgd_step(std::vector<Tensor>& params, OptimizerState& state, double lr,
              double momentum, double weight_decay, std::size_t step,
              const std::vector<bool>* trainable = nullptr);

// Learning rate at a global step: linear warmup from 0, then cosine decay to
// 0 or step decay by step_factor at each milestone epoch.
double lr_at(const TrainConfig& config, std::size_t step,
             std::size_t steps_per_epoch);

struct RunRecord {
  std::size_t epoch = 0;
  double lr = 0.0;  // last step of the epoch
  // Means over the epoch's steps.
  double eps_u = 0.0;
  double eps_b = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double alpha = 0.0;
  double total = 0.0;
  Accuracies accuracy;
};

struct TrainHooks {
  std::function<void(std::size_t step, double lr, const LossBreakdown&)> on_step;
  std::function<void(const LdaModel&, const RunRecord&)> on_epoch;
};

struct TrainResult {
  LdaModel model;
  std::vector<RunRecord> records;
};

// Runs one strategy on the dataset. Deterministic per (dataset, config.seed):
// identical inputs reproduce bit-identical records and parameters.
TrainResult train(const LongTailDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// RunRecord CSV (fixed column set, %.17g values, byte-stable).
std::string run_records_csv(const std::vector<RunRecord>& records);

struct AblationGrid {
  std::vector<Strategy> strategies;
  std::vector<double> gammas = {2.0};        // adaptive-alpha cells
  std::vector<double> fixed_alphas = {1.0};  // fixed-alpha cells
  std::vector<double> betas = {1.0};         // 0 switches the regularizers off
  std::vector<std::uint64_t> seeds = {0};
  TrainConfig base;
};

struct AblationCell {
  std::string name;
  TrainConfig config;
};

struct CellResult {
  std::string name;
  TrainConfig config;
  bool ok = false;
  std::string error;  // set when ok is false
  RunRecord final_record;
};

std::vector<AblationCell> expand_grid(const AblationGrid& grid);

// Runs every cell (failures are recorded, not fatal), at most max_threads at
// a time. Results come back in cell order regardless of scheduling.
std::vector<CellResult> ablate(const LongTailDataset& dataset,
                               const std::vector<AblationCell>& cells,
                               std::size_t max_threads = 1);

std::string ablation_csv(const std::vector<CellResult>& results);

}  // namespace lda
