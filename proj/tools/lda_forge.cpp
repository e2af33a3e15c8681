// lda_forge: synthesize long-tailed datasets, train and evaluate models,
// sweep ablation grids and merge run reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lda/data.hpp"
#include "lda/error.hpp"
#include "lda/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct SynthArgs {
  std::size_t classes = 10;
  std::size_t max_count = 500;
  double ir = 100.0;
  std::size_t dim = 16;
  double center_scale = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  std::size_t test_per_class = 32;
  std::string out;
};

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string out = "runs";
  std::string strategy;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr_base;
  std::optional<double> gamma;
  std::optional<double> beta;
  std::optional<double> alpha_fixed;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out = "eval";
  std::size_t many_threshold = 100;
  std::size_t few_threshold = 20;
};

struct AblateArgs {
  std::string config_path;
  std::string out = "ablation";
};

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int do_synth(const SynthArgs& args) {
  lda::SynthSpec spec;
  spec.profile.num_classes = args.classes;
  spec.profile.max_count = args.max_count;
  spec.profile.imbalance_ratio = args.ir;
  spec.dim = args.dim;
  spec.center_scale = args.center_scale;
  spec.noise_sigma = args.noise_sigma;
  spec.seed = args.seed;
  spec.test_per_class = args.test_per_class;
  const lda::LongTailDataset dataset = lda::synth_gaussian(spec);
  lda::export_dataset(dataset, args.out, spec);
  std::cout << "wrote " << dataset.num_rows() << " rows ("
            << dataset.train_size() << " train) for " << dataset.num_classes
            << " classes to " << args.out << "\n";
  return kExitOk;
}

int do_train(const TrainArgs& args) {
  lda::ExperimentConfig config;
  if (!args.config_path.empty()) {
    config = lda::load_experiment_config(args.config_path);
  }
  // Flags override file values.
  if (!args.data.empty()) {
    config.dataset_path = args.data;
    config.synth.reset();
  }
  if (!args.strategy.empty())
    config.train.strategy = lda::strategy_from_name(args.strategy);
  if (args.epochs) config.train.epochs = *args.epochs;
  if (args.batch_size) config.train.batch_size = *args.batch_size;
  if (args.lr_base) config.train.lr_base = *args.lr_base;
  if (args.gamma) config.train.gamma = *args.gamma;
  if (args.beta) config.train.beta = *args.beta;
  if (args.alpha_fixed) config.train.alpha_fixed = *args.alpha_fixed;
  if (args.seed) config.train.seed = *args.seed;

  const lda::TrainOutcome outcome = lda::run_training(config, args.out);
  const auto& acc = outcome.final_record.accuracy;
  std::cout << "run dir: " << outcome.run_dir.string() << "\n"
            << "final accuracy: overall=" << acc.overall;
  auto show = [](const char* name, const std::optional<double>& v) {
    std::cout << " " << name << "=";
    if (v) {
      std::cout << *v;
    } else {
      std::cout << "-";
    }
  };
  show("many", acc.many);
  show("medium", acc.medium);
  show("few", acc.few);
  std::cout << "\n";
  return kExitOk;
}

int do_eval(const EvalArgs& args) {
  lda::SplitSpec split;
  split.many_threshold = args.many_threshold;
  split.few_threshold = args.few_threshold;
  const lda::EvalOutcome outcome =
      lda::run_eval(args.model, args.data, args.out, split);
  const auto& acc = outcome.accuracy;
  auto show = [](const std::optional<double>& v) {
    if (v) {
      std::cout << *v;
    } else {
      std::cout << "-";
    }
  };
  std::cout << "overall: " << acc.overall << "\nmany:    ";
  show(acc.many);
  std::cout << "\nmedium:  ";
  show(acc.medium);
  std::cout << "\nfew:     ";
  show(acc.few);
  std::cout << "\nwrote diagnostics to " << args.out << "\n";
  return kExitOk;
}

int do_ablate(const AblateArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) throw lda::ConfigError("cannot open " + args.config_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const lda::AblateSpec spec = lda::parse_ablate_config(buf.str());
  const auto results =
      lda::run_ablation(spec, args.out, lda::ablation_thread_cap());
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.ok) ++failed;
  }
  std::cout << "ran " << results.size() << " cells (" << failed
            << " failed); wrote " << (std::filesystem::path(args.out) / "grid.csv").string()
            << "\n";
  return kExitOk;
}

int do_report(const ReportArgs& args) {
  std::vector<std::filesystem::path> dirs(args.runs.begin(), args.runs.end());
  std::optional<std::filesystem::path> out_csv;
  if (!args.out.empty()) out_csv = args.out;
  std::cout << lda::run_report(dirs, out_csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-tailed distribution adaptation training lab"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--classes", synth.classes, "number of classes");
  synth_cmd->add_option("--max-count", synth.max_count, "head class train count");
  synth_cmd->add_option("--ir", synth.ir, "imbalance ratio (head/tail)");
  synth_cmd->add_option("--dim", synth.dim, "feature dimension");
  synth_cmd->add_option("--center-scale", synth.center_scale, "class center norm");
  synth_cmd->add_option("--noise-sigma", synth.noise_sigma, "per-class std");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--test-per-class", synth.test_per_class,
                        "balanced test rows per class");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train one strategy");
  train_cmd->add_option("--config", train.config_path, "experiment config JSON");
  train_cmd->add_option("--data", train.data, "dataset directory");
  train_cmd->add_option("--out", train.out, "run output root");
  train_cmd->add_option("--strategy", train.strategy,
                        "lda | ce | rw | ce_then_rw | ce_then_rs | lda_fixed_alpha");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--batch-size", train.batch_size, "batch size");
  train_cmd->add_option("--lr", train.lr_base, "base learning rate");
  train_cmd->add_option("--gamma", train.gamma, "adaptive alpha exponent");
  train_cmd->add_option("--beta", train.beta, "regularizer weight");
  train_cmd->add_option("--alpha", train.alpha_fixed, "fixed alpha value");
  train_cmd->add_option("--seed", train.seed, "run seed");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--model", eval.model, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
  eval_cmd->add_option("--out", eval.out, "diagnostics output directory");
  eval_cmd->add_option("--many-threshold", eval.many_threshold,
                       "train count above which a class is many-shot");
  eval_cmd->add_option("--few-threshold", eval.few_threshold,
                       "train count below which a class is few-shot");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "run a strategy grid");
  ablate_cmd->add_option("--config", ablate.config_path, "grid config JSON")
      ->required();
  ablate_cmd->add_option("--out", ablate.out, "grid output directory");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "merge run summaries");
  report_cmd->add_option("runs", report.runs, "run directories")->required();
  report_cmd->add_option("--out", report.out, "comparison CSV path");

  try {
    app.parse(argc, argv);
    if (synth_cmd->parsed()) return do_synth(synth);
    if (train_cmd->parsed()) return do_train(train);
    if (eval_cmd->parsed()) return do_eval(eval);
    if (ablate_cmd->parsed()) return do_ablate(ablate);
    if (report_cmd->parsed()) return do_report(report);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const lda::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const lda::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const lda::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const lda::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const lda::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
