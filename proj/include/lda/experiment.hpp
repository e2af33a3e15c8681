#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lda/data.hpp"
#include "lda/trainer.hpp"

namespace lda {

// Resolved experiment: dataset source plus training and metric options.
// Parsed from a sectioned JSON document (dataset / model / train / metrics);
// unknown keys are rejected so typos cannot silently change a run.
struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;
  std::optional<SynthSpec> synth;
  TrainConfig train;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Canonical frozen form of the resolved config (defaults filled in).
std::string resolved_config_text(const ExperimentConfig& config);

// FNV-1a content hash of the frozen config, 12 hex characters.
std::string config_hash(const std::string& resolved_text);

LongTailDataset materialize_dataset(const ExperimentConfig& config);

struct TrainOutcome {
  std::filesystem::path run_dir;
  RunRecord final_record;
};

// Creates the content-addressed run directory, freezes the config, trains,
// and writes run.csv, summary.json and model.ckpt. A directory holding a
// different frozen config is an error.
TrainOutcome run_training(const ExperimentConfig& config,
                          const std::filesystem::path& out_root);

struct EvalOutcome {
  Accuracies accuracy;
  std::string diagnostics_json;
};

// Evaluates a checkpoint on a dataset and writes diagnostics.json,
// confusion.csv and weights.csv under out_dir.
EvalOutcome run_eval(const std::filesystem::path& checkpoint,
                     const std::filesystem::path& data_dir,
                     const std::filesystem::path& out_dir,
                     const SplitSpec& split);

struct AblateSpec {
  ExperimentConfig base;
  AblationGrid grid;  // grid.base is ignored; base.train is used
};

AblateSpec parse_ablate_config(const std::string& json_text);

// Runs the grid and writes grid.csv under out_dir.
std::vector<CellResult> run_ablation(const AblateSpec& spec,
                                     const std::filesystem::path& out_dir,
                                     std::size_t max_threads);

// Merges run summaries into a comparison table: CSV written to out_csv (when
// set) and an aligned text table returned for stdout. Delta columns compare
// against the first run.
std::string run_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::optional<std::filesystem::path>& out_csv);

// LDA_FORGE_THREADS cap, falling back to the hardware count.
std::size_t ablation_thread_cap();

}  // namespace lda
