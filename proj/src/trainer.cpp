#include "lda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "lda/error.hpp"
#include "lda/rng.hpp"

namespace lda {

namespace {

constexpr std::uint64_t kModelStream = 0x4d;
constexpr std::uint64_t kSamplerStream = 0x53;
constexpr std::uint64_t kStageTwoSamplerStream = 0x5332;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::lda: return "lda";
    case Strategy::ce: return "ce";
    case Strategy::rw: return "rw";
    case Strategy::ce_then_rw: return "ce_then_rw";
    case Strategy::ce_then_rs: return "ce_then_rs";
    case Strategy::lda_fixed_alpha: return "lda_fixed_alpha";
  }
  throw ConfigError("unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "lda") return Strategy::lda;
  if (name == "ce") return Strategy::ce;
  if (name == "rw") return Strategy::rw;
  if (name == "ce_then_rw") return Strategy::ce_then_rw;
  if (name == "ce_then_rs") return Strategy::ce_then_rs;
  if (name == "lda_fixed_alpha") return Strategy::lda_fixed_alpha;
  throw ConfigError("unknown strategy '" + name + "'");
}

namespace {

bool is_two_stage(Strategy s) {
  return s == Strategy::ce_then_rw || s == Strategy::ce_then_rs;
}

bool is_lda_kind(Strategy s) {
  return s == Strategy::lda || s == Strategy::lda_fixed_alpha;
}

}  // namespace

void validate(const TrainConfig& config, std::size_t train_size) {
  if (config.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (config.batch_size < 1 || config.batch_size > train_size) {
    throw ConfigError("train: batch_size " + std::to_string(config.batch_size) +
                      " out of range for " + std::to_string(train_size) +
                      " train rows");
  }
  if (config.lr_base < 0 || config.momentum < 0 || config.weight_decay < 0) {
    throw ConfigError("train: rates must be >= 0");
  }
  if (config.beta < 0) throw ConfigError("train: beta must be >= 0");
  if (config.gamma < 0) throw ConfigError("train: gamma must be >= 0");
  if (config.alpha_fixed < 0) throw ConfigError("train: alpha must be >= 0");
  if (config.margin <= 0 || config.margin > 2) {
    throw ConfigError("train: margin must lie in (0, 2]");
  }
  if (config.window < 1) throw ConfigError("train: window must be >= 1");
  if (config.warmup_epochs >= config.epochs && config.lr_base > 0) {
    throw ConfigError("train: warmup_epochs must be < epochs");
  }
  for (std::size_t i = 0; i < config.milestones.size(); ++i) {
    if (config.milestones[i] >= config.epochs) {
      throw ConfigError("train: milestone beyond final epoch");
    }
    if (i > 0 && config.milestones[i] <= config.milestones[i - 1]) {
      throw ConfigError("train: milestones must be strictly increasing");
    }
  }
  if (is_two_stage(config.strategy) && config.stage_split_epoch >= config.epochs) {
    throw ConfigError("train: stage_split_epoch must be < epochs");
  }
}

std::size_t resolve_stage_split(const TrainConfig& config) {
  if (config.stage_split_epoch > 0) return config.stage_split_epoch;
  const auto split = static_cast<std::size_t>(
      std::llround(0.8 * static_cast<double>(config.epochs)));
  return std::max<std::size_t>(1, std::min(split, config.epochs - 1));
}

OptimizerState::OptimizerState(const std::vector<Tensor>& params) {
  buffers_.reserve(params.size());
  for (const Tensor& p : params)
    buffers_.emplace_back(p.numel(), 0.0);
}

void sgd_step(std::vector<Tensor>& params, OptimizerState& state, double lr,
              double momentum, double weight_decay, std::size_t step,
              const std::vector<bool>* trainable) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (trainable != nullptr && !(*trainable)[k]) continue;
    Tensor& param = params[k];
    auto& buffer = state.buffer(k);
    auto& values = param.values_mut();
    const bool has_grad = param.has_grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? param.grad()[i] : 0.0;
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient at step " +
                                  std::to_string(step),
                              step);
      }
      buffer[i] = momentum * buffer[i] + g + weight_decay * values[i];
      values[i] -= lr * buffer[i];
    }
  }
}

double lr_at(const TrainConfig& config, std::size_t step,
             std::size_t steps_per_epoch) {
  const std::size_t total_steps = config.epochs * steps_per_epoch;
  const std::size_t warmup_steps = config.warmup_epochs * steps_per_epoch;
  if (warmup_steps > 0 && step < warmup_steps) {
    return config.lr_base * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  if (config.schedule == ScheduleKind::cosine) {
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return config.lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const std::size_t epoch = step / steps_per_epoch;
  double lr = config.lr_base;
  for (std::size_t milestone : config.milestones) {
    if (epoch >= milestone) lr *= config.step_factor;
  }
  return lr;
}

namespace {

Tensor batch_features(const LongTailDataset& dataset,
                      const std::vector<std::size_t>& rows) {
  std::vector<double> data;
  data.reserve(rows.size() * dataset.dim);
  for (std::size_t i : rows) {
    const auto r = dataset.row(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor::constant({rows.size(), dataset.dim}, std::move(data));
}

std::vector<int> batch_labels(const LongTailDataset& dataset,
                              const std::vector<std::size_t>& rows) {
  std::vector<int> labels(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    labels[k] = dataset.labels[rows[k]];
  return labels;
}

struct StepLoss {
  Tensor value;
  LossBreakdown breakdown;
};

}  // namespace

TrainResult train(const LongTailDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks) {
  validate(config, dataset.train_size());

  ModelDims dims;
  dims.input = dataset.dim;
  dims.hidden = config.hidden;
  dims.rep = config.rep_dim;
  dims.classes = dataset.num_classes;
  dims.proj = config.proj_dim;
  const ModelKind kind =
      is_lda_kind(config.strategy) ? ModelKind::lda : ModelKind::baseline;

  LdaModel model =
      LdaModel::init(kind, dims, mix_seed({config.seed, kModelStream}));
  const ClassWeights weights = ClassWeights::from_counts(dataset.class_counts);

  Sampler sampler(dataset, SamplerMode::instance_random, config.batch_size,
                  mix_seed({config.seed, kSamplerStream}));
  std::optional<Sampler> stage2_sampler;
  if (config.strategy == Strategy::ce_then_rs) {
    stage2_sampler.emplace(dataset, SamplerMode::class_balanced,
                           config.batch_size,
                           mix_seed({config.seed, kStageTwoSamplerStream}));
  }
  const std::size_t steps_per_epoch = sampler.steps_per_epoch();
  const std::size_t split_epoch =
      is_two_stage(config.strategy) ? resolve_stage_split(config) : config.epochs;

  BalanceState balance(config.window, config.gamma);

  std::vector<Tensor> params = model.parameters();
  OptimizerState opt(params);
  std::vector<bool> stage2_trainable(params.size(), true);
  {
    const std::size_t frozen = model.encoder_parameters().size();
    for (std::size_t k = 0; k < frozen; ++k) stage2_trainable[k] = false;
  }

  TrainResult result{std::move(model), {}};
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool stage2 = epoch >= split_epoch;
    Sampler& current =
        stage2 && stage2_sampler ? *stage2_sampler : sampler;
    current.begin_epoch(epoch);

    RunRecord record;
    record.epoch = epoch;
    for (std::size_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      const std::vector<std::size_t> rows = current.batch(step);
      const Tensor x = batch_features(dataset, rows);
      const std::vector<int> labels = batch_labels(dataset, rows);
      const double lr = stage2 ? config.lr_base / 100.0
                               : lr_at(config, global_step, steps_per_epoch);

      Tape tape;
      const ForwardTrain fwd = result.model.forward_train(x);
      StepLoss loss;
      switch (config.strategy) {
        case Strategy::lda:
        case Strategy::lda_fixed_alpha: {
          Tensor eps_u = unbalanced_risk(fwd.logits_u, labels);
          Tensor eps_b = balanced_risk(fwd.logits_b, labels, weights);
          const BatchCenters centers = compute_centers(fwd.proj, labels);
          Tensor l_intra = intra_loss(centers);
          Tensor l_inter = inter_loss(centers, weights, config.margin);
          const double alpha =
              config.strategy == Strategy::lda
                  ? balance.update(fwd.logits_b, fwd.logits_u, labels)
                  : config.alpha_fixed;
          const TotalLoss total =
              total_loss(eps_u, eps_b, l_intra, l_inter, alpha, config.beta);
          loss = {total.value, total.breakdown};
          break;
        }
        case Strategy::ce: {
          Tensor eps_u = unbalanced_risk(fwd.logits_b, labels);
          loss.value = eps_u;
          loss.breakdown.eps_u = eps_u.value();
          loss.breakdown.total = eps_u.value();
          break;
        }
        case Strategy::rw: {
          Tensor eps_b = balanced_risk(fwd.logits_b, labels, weights);
          loss.value = eps_b;
          loss.breakdown.eps_b = eps_b.value();
          loss.breakdown.alpha = 1.0;
          loss.breakdown.total = eps_b.value();
          break;
        }
        case Strategy::ce_then_rw: {
          if (!stage2) {
            Tensor eps_u = unbalanced_risk(fwd.logits_b, labels);
            loss.value = eps_u;
            loss.breakdown.eps_u = eps_u.value();
            loss.breakdown.total = eps_u.value();
          } else {
            Tensor eps_b = balanced_risk(fwd.logits_b, labels, weights);
            loss.value = eps_b;
            loss.breakdown.eps_b = eps_b.value();
            loss.breakdown.alpha = 1.0;
            loss.breakdown.total = eps_b.value();
          }
          break;
        }
        case Strategy::ce_then_rs: {
          Tensor eps_u = unbalanced_risk(fwd.logits_b, labels);
          loss.value = eps_u;
          loss.breakdown.eps_u = eps_u.value();
          loss.breakdown.total = eps_u.value();
          break;
        }
      }
      if (!std::isfinite(loss.value.value())) {
        throw DivergenceError("non-finite loss at step " +
                                  std::to_string(global_step),
                              global_step);
      }
      tape.backward(loss.value);
      sgd_step(params, opt, lr, config.momentum, config.weight_decay,
               global_step, stage2 ? &stage2_trainable : nullptr);
      for (Tensor& p : params) p.clear_grad();

      record.lr = lr;
      record.eps_u += loss.breakdown.eps_u;
      record.eps_b += loss.breakdown.eps_b;
      record.l_intra += loss.breakdown.l_intra;
      record.l_inter += loss.breakdown.l_inter;
      record.alpha += loss.breakdown.alpha;
      record.total += loss.breakdown.total;
      if (hooks.on_step) hooks.on_step(global_step, lr, loss.breakdown);
    }
    const double inv_steps = 1.0 / static_cast<double>(steps_per_epoch);
    record.eps_u *= inv_steps;
    record.eps_b *= inv_steps;
    record.l_intra *= inv_steps;
    record.l_inter *= inv_steps;
    record.alpha *= inv_steps;
    record.total *= inv_steps;
    record.accuracy = evaluate(result.model, dataset, config.split).accuracy;
    result.records.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(result.model, record);
  }
  return result;
}

std::string run_records_csv(const std::vector<RunRecord>& records) {
  std::ostringstream out;
  out << "epoch,lr,eps_u,eps_b,l_intra,l_inter,alpha,total,"
         "acc_overall,acc_many,acc_medium,acc_few\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const RunRecord& r : records) {
    out << r.epoch << "," << format_double(r.lr) << ","
        << format_double(r.eps_u) << "," << format_double(r.eps_b) << ","
        << format_double(r.l_intra) << "," << format_double(r.l_inter) << ","
        << format_double(r.alpha) << "," << format_double(r.total) << ","
        << format_double(r.accuracy.overall) << "," << opt(r.accuracy.many)
        << "," << opt(r.accuracy.medium) << "," << opt(r.accuracy.few) << "\n";
  }
  return out.str();
}

std::vector<AblationCell> expand_grid(const AblationGrid& grid) {
  if (grid.strategies.empty() || grid.seeds.empty()) {
    throw ConfigError("ablate: grid needs at least one strategy and one seed");
  }
  std::vector<AblationCell> cells;
  auto strip_zero = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  for (std::uint64_t seed : grid.seeds) {
    for (Strategy strategy : grid.strategies) {
      TrainConfig base = grid.base;
      base.strategy = strategy;
      base.seed = seed;
      const std::string suffix = "-s" + std::to_string(seed);
      if (strategy == Strategy::lda) {
        for (double gamma : grid.gammas) {
          for (double beta : grid.betas) {
            TrainConfig cfg = base;
            cfg.gamma = gamma;
            cfg.beta = beta;
            cells.push_back({"lda-g" + strip_zero(gamma) + "-b" +
                                 strip_zero(beta) + suffix,
                             cfg});
          }
        }
      } else if (strategy == Strategy::lda_fixed_alpha) {
        for (double alpha : grid.fixed_alphas) {
          for (double beta : grid.betas) {
            TrainConfig cfg = base;
            cfg.alpha_fixed = alpha;
            cfg.beta = beta;
            cells.push_back({"lda_fixed-a" + strip_zero(alpha) + "-b" +
                                 strip_zero(beta) + suffix,
                             cfg});
          }
        }
      } else {
        cells.push_back({strategy_name(strategy) + suffix, base});
      }
    }
  }
  return cells;
}

std::vector<CellResult> ablate(const LongTailDataset& dataset,
                               const std::vector<AblationCell>& cells,
                               std::size_t max_threads) {
  std::vector<CellResult> results(cells.size());
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(max_threads, cells.size()));

  std::mutex queue_mutex;
  std::size_t next = 0;
  auto worker = [&]() {
    while (true) {
      std::size_t index;
      {
        std::lock_guard<std::mutex> lock(queue_mutex);
        if (next >= cells.size()) return;
        index = next++;
      }
      CellResult result;
      result.name = cells[index].name;
      result.config = cells[index].config;
      try {
        const TrainResult run = train(dataset, cells[index].config);
        result.final_record = run.records.back();
        result.ok = true;
      } catch (const Error& e) {
        result.ok = false;
        result.error = e.what();
      }
      results[index] = std::move(result);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

std::string ablation_csv(const std::vector<CellResult>& results) {
  std::ostringstream out;
  out << "cell,strategy,seed,gamma,alpha_fixed,beta,status,"
         "acc_overall,acc_many,acc_medium,acc_few,"
         "eps_u,eps_b,l_intra,l_inter,alpha,total,error\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const CellResult& r : results) {
    out << r.name << "," << strategy_name(r.config.strategy) << ","
        << r.config.seed << "," << format_double(r.config.gamma) << ","
        << format_double(r.config.alpha_fixed) << ","
        << format_double(r.config.beta) << "," << (r.ok ? "ok" : "failed");
    if (r.ok) {
      const RunRecord& rec = r.final_record;
      out << "," << format_double(rec.accuracy.overall) << ","
          << opt(rec.accuracy.many) << "," << opt(rec.accuracy.medium) << ","
          << opt(rec.accuracy.few) << "," << format_double(rec.eps_u) << ","
          << format_double(rec.eps_b) << "," << format_double(rec.l_intra)
          << "," << format_double(rec.l_inter) << ","
          << format_double(rec.alpha) << "," << format_double(rec.total)
          << ",";
    } else {
      out << ",,,,,,,,,,";
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << msg;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace lda
