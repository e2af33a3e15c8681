#include "lda/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "lda/error.hpp"
#include "json.hpp"

namespace lda {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void reject_unknown_keys(const json& object, const char* section,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : object.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw ConfigError(std::string("config: unknown key '") + key + "' in " +
                        section);
    }
  }
}

template <class T>
void read_field(const json& object, const char* key, T& out) {
  if (!object.contains(key)) return;
  try {
    out = object.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " +
                      e.what());
  }
}

ScheduleKind schedule_from_name(const std::string& name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "step") return ScheduleKind::step;
  throw ConfigError("config: unknown schedule '" + name + "'");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  reject_unknown_keys(doc, "top level", {"dataset", "model", "train", "metrics"});

  ExperimentConfig config;
  if (doc.contains("dataset")) {
    const json& ds = doc.at("dataset");
    if (ds.contains("path")) {
      reject_unknown_keys(ds, "dataset", {"path"});
      config.dataset_path = ds.at("path").get<std::string>();
    } else {
      reject_unknown_keys(ds, "dataset",
                          {"classes", "max_count", "ir", "dim", "center_scale",
                           "noise_sigma", "seed", "test_per_class"});
      SynthSpec spec;
      read_field(ds, "classes", spec.profile.num_classes);
      read_field(ds, "max_count", spec.profile.max_count);
      read_field(ds, "ir", spec.profile.imbalance_ratio);
      read_field(ds, "dim", spec.dim);
      read_field(ds, "center_scale", spec.center_scale);
      read_field(ds, "noise_sigma", spec.noise_sigma);
      read_field(ds, "seed", spec.seed);
      read_field(ds, "test_per_class", spec.test_per_class);
      config.synth = spec;
    }
  }
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown_keys(m, "model", {"hidden", "rep_dim", "proj_dim"});
    read_field(m, "hidden", config.train.hidden);
    read_field(m, "rep_dim", config.train.rep_dim);
    read_field(m, "proj_dim", config.train.proj_dim);
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown_keys(
        t, "train",
        {"strategy", "epochs", "batch_size", "lr_base", "momentum",
         "weight_decay", "schedule", "milestones", "step_factor",
         "warmup_epochs", "gamma", "beta", "margin", "window", "alpha_fixed",
         "stage_split_epoch", "seed"});
    if (t.contains("strategy")) {
      config.train.strategy =
          strategy_from_name(t.at("strategy").get<std::string>());
    }
    read_field(t, "epochs", config.train.epochs);
    read_field(t, "batch_size", config.train.batch_size);
    read_field(t, "lr_base", config.train.lr_base);
    read_field(t, "momentum", config.train.momentum);
    read_field(t, "weight_decay", config.train.weight_decay);
    if (t.contains("schedule")) {
      config.train.schedule =
          schedule_from_name(t.at("schedule").get<std::string>());
    }
    read_field(t, "milestones", config.train.milestones);
    read_field(t, "step_factor", config.train.step_factor);
    read_field(t, "warmup_epochs", config.train.warmup_epochs);
    read_field(t, "gamma", config.train.gamma);
    read_field(t, "beta", config.train.beta);
    read_field(t, "margin", config.train.margin);
    read_field(t, "window", config.train.window);
    read_field(t, "alpha_fixed", config.train.alpha_fixed);
    read_field(t, "stage_split_epoch", config.train.stage_split_epoch);
    read_field(t, "seed", config.train.seed);
  }
  if (doc.contains("metrics")) {
    const json& m = doc.at("metrics");
    reject_unknown_keys(m, "metrics", {"many_threshold", "few_threshold"});
    read_field(m, "many_threshold", config.train.split.many_threshold);
    read_field(m, "few_threshold", config.train.split.few_threshold);
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string resolved_config_text(const ExperimentConfig& config) {
  ordered_json doc;
  if (config.dataset_path) {
    doc["dataset"] = {{"path", config.dataset_path->string()}};
  } else if (config.synth) {
    const SynthSpec& s = *config.synth;
    doc["dataset"] = {{"classes", s.profile.num_classes},
                      {"max_count", s.profile.max_count},
                      {"ir", s.profile.imbalance_ratio},
                      {"dim", s.dim},
                      {"center_scale", s.center_scale},
                      {"noise_sigma", s.noise_sigma},
                      {"seed", s.seed},
                      {"test_per_class", s.test_per_class}};
  }
  const TrainConfig& t = config.train;
  doc["model"] = {{"hidden", t.hidden},
                  {"rep_dim", t.rep_dim},
                  {"proj_dim", t.proj_dim}};
  doc["train"] = {
      {"strategy", strategy_name(t.strategy)},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr_base", t.lr_base},
      {"momentum", t.momentum},
      {"weight_decay", t.weight_decay},
      {"schedule", t.schedule == ScheduleKind::cosine ? "cosine" : "step"},
      {"milestones", t.milestones},
      {"step_factor", t.step_factor},
      {"warmup_epochs", t.warmup_epochs},
      {"gamma", t.gamma},
      {"beta", t.beta},
      {"margin", t.margin},
      {"window", t.window},
      {"alpha_fixed", t.alpha_fixed},
      {"stage_split_epoch", t.stage_split_epoch},
      {"seed", t.seed}};
  doc["metrics"] = {{"many_threshold", t.split.many_threshold},
                    {"few_threshold", t.split.few_threshold}};
  return doc.dump(2) + "\n";
}

std::string config_hash(const std::string& resolved_text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved_text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return std::string(buf).substr(0, 12);
}

LongTailDataset materialize_dataset(const ExperimentConfig& config) {
  if (config.dataset_path) return load_dataset(*config.dataset_path);
  if (config.synth) return synth_gaussian(*config.synth);
  throw ConfigError("config: no dataset section");
}

namespace {

ordered_json accuracy_json(const Accuracies& acc) {
  ordered_json out;
  out["overall"] = acc.overall;
  out["many"] = acc.many ? ordered_json(*acc.many) : ordered_json(nullptr);
  out["medium"] = acc.medium ? ordered_json(*acc.medium) : ordered_json(nullptr);
  out["few"] = acc.few ? ordered_json(*acc.few) : ordered_json(nullptr);
  return out;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

TrainOutcome run_training(const ExperimentConfig& config,
                          const std::filesystem::path& out_root) {
  const std::string frozen = resolved_config_text(config);
  const std::string hash = config_hash(frozen);
  const std::filesystem::path run_dir =
      out_root / (strategy_name(config.train.strategy) + "-s" +
                  std::to_string(config.train.seed) + "-" + hash);
  std::filesystem::create_directories(run_dir);
  const auto config_path = run_dir / "config.json";
  if (std::filesystem::exists(config_path)) {
    std::ifstream existing(config_path, std::ios::binary);
    std::ostringstream buf;
    buf << existing.rdbuf();
    if (buf.str() != frozen) {
      throw ConfigError("run dir " + run_dir.string() +
                        " already holds a different config");
    }
  } else {
    write_text_file(config_path, frozen);
  }

  const LongTailDataset dataset = materialize_dataset(config);
  const TrainResult result = train(dataset, config.train);

  write_text_file(run_dir / "run.csv", run_records_csv(result.records));
  result.model.save(run_dir / "model.ckpt");

  const RunRecord& final_record = result.records.back();
  ordered_json summary;
  summary["strategy"] = strategy_name(config.train.strategy);
  summary["seed"] = config.train.seed;
  summary["epochs"] = config.train.epochs;
  summary["config_hash"] = hash;
  summary["dataset"] = {{"classes", dataset.num_classes},
                        {"dim", dataset.dim},
                        {"train_size", dataset.train_size()},
                        {"class_counts", dataset.class_counts}};
  summary["final"] = {{"epoch", final_record.epoch},
                      {"lr", final_record.lr},
                      {"eps_u", final_record.eps_u},
                      {"eps_b", final_record.eps_b},
                      {"l_intra", final_record.l_intra},
                      {"l_inter", final_record.l_inter},
                      {"alpha", final_record.alpha},
                      {"total", final_record.total},
                      {"accuracy", accuracy_json(final_record.accuracy)}};
  write_text_file(run_dir / "summary.json", summary.dump(2) + "\n");
  return {run_dir, final_record};
}

EvalOutcome run_eval(const std::filesystem::path& checkpoint,
                     const std::filesystem::path& data_dir,
                     const std::filesystem::path& out_dir,
                     const SplitSpec& split) {
  if (!std::filesystem::exists(checkpoint)) {
    throw ConfigError("eval: checkpoint not found: " + checkpoint.string());
  }
  const LdaModel model = LdaModel::load(checkpoint);
  const LongTailDataset dataset = load_dataset(data_dir);
  const EvalReport report = evaluate(model, dataset, split);

  std::filesystem::create_directories(out_dir);

  // Confusion matrix, one row per true class.
  {
    std::ostringstream out;
    out << "true_class";
    for (std::size_t c = 0; c < report.num_classes; ++c) out << ",pred_" << c;
    out << "\n";
    for (std::size_t r = 0; r < report.num_classes; ++r) {
      out << r;
      for (std::size_t c = 0; c < report.num_classes; ++c)
        out << "," << report.confusion[r * report.num_classes + c];
      out << "\n";
    }
    write_text_file(out_dir / "confusion.csv", out.str());
  }
  export_weights(model, out_dir / "weights.csv");

  const WeightNormReport norms = weight_norms(model);
  ordered_json diag;
  diag["accuracy"] = accuracy_json(report.accuracy);
  diag["weight_norms"] = {{"balanced", norms.balanced},
                          {"cv_balanced", norms.cv_balanced}};
  if (norms.cv_unbalanced) {
    diag["weight_norms"]["unbalanced"] = norms.unbalanced;
    diag["weight_norms"]["cv_unbalanced"] = *norms.cv_unbalanced;
  }
  try {
    diag["intra_over_inter"] = intra_inter_ratio(model, dataset);
  } catch (const UndefinedMetricError& e) {
    diag["intra_over_inter"] = nullptr;
    diag["intra_over_inter_note"] = e.what();
  }
  {
    const CddResult cdd = cdd_of_dataset(model, dataset);
    diag["cdd"] = {{"value", cdd.value},
                   {"skipped_classes", cdd.skipped_classes}};
  }
  const std::string diag_text = diag.dump(2) + "\n";
  write_text_file(out_dir / "diagnostics.json", diag_text);
  return {report.accuracy, diag_text};
}

AblateSpec parse_ablate_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  if (!doc.contains("ablate")) {
    throw ConfigError("config: ablate section required");
  }
  const json grid_doc = doc.at("ablate");
  doc.erase("ablate");

  AblateSpec spec;
  spec.base = parse_experiment_config(doc.dump());

  reject_unknown_keys(grid_doc, "ablate",
                      {"strategies", "gammas", "alphas", "betas", "seeds"});
  std::vector<std::string> strategy_names;
  read_field(grid_doc, "strategies", strategy_names);
  if (strategy_names.empty()) {
    throw ConfigError("config: ablate.strategies must not be empty");
  }
  for (const std::string& name : strategy_names) {
    spec.grid.strategies.push_back(strategy_from_name(name));
  }
  read_field(grid_doc, "gammas", spec.grid.gammas);
  read_field(grid_doc, "alphas", spec.grid.fixed_alphas);
  read_field(grid_doc, "betas", spec.grid.betas);
  read_field(grid_doc, "seeds", spec.grid.seeds);
  spec.grid.base = spec.base.train;
  return spec;
}

std::vector<CellResult> run_ablation(const AblateSpec& spec,
                                     const std::filesystem::path& out_dir,
                                     std::size_t max_threads) {
  const LongTailDataset dataset = materialize_dataset(spec.base);
  AblationGrid grid = spec.grid;
  grid.base = spec.base.train;
  const std::vector<AblationCell> cells = expand_grid(grid);
  const std::vector<CellResult> results = ablate(dataset, cells, max_threads);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "grid.csv", ablation_csv(results));
  return results;
}

std::string run_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::optional<std::filesystem::path>& out_csv) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");

  struct Row {
    std::string name;
    std::string strategy;
    std::uint64_t seed;
    double overall;
    std::optional<double> many, medium, few;
  };
  std::vector<Row> rows;
  for (const auto& dir : run_dirs) {
    const auto summary_path = dir / "summary.json";
    std::ifstream in(summary_path);
    if (!in) throw ConfigError("report: cannot open " + summary_path.string());
    json summary;
    try {
      in >> summary;
      Row row;
      row.name = dir.filename().string();
      row.strategy = summary.at("strategy").get<std::string>();
      row.seed = summary.at("seed").get<std::uint64_t>();
      const json& acc = summary.at("final").at("accuracy");
      row.overall = acc.at("overall").get<double>();
      auto opt = [&](const char* key) -> std::optional<double> {
        if (acc.at(key).is_null()) return std::nullopt;
        return acc.at(key).get<double>();
      };
      row.many = opt("many");
      row.medium = opt("medium");
      row.few = opt("few");
      rows.push_back(std::move(row));
    } catch (const json::exception& e) {
      throw ConfigError("report: bad summary " + summary_path.string() + ": " +
                        e.what());
    }
  }

  if (out_csv) {
    std::ostringstream csv;
    csv << "run,strategy,seed,acc_overall,acc_many,acc_medium,acc_few,"
           "delta_overall\n";
    for (const Row& row : rows) {
      csv << row.name << "," << row.strategy << "," << row.seed << ","
          << format_double(row.overall) << ","
          << (row.many ? format_double(*row.many) : "") << ","
          << (row.medium ? format_double(*row.medium) : "") << ","
          << (row.few ? format_double(*row.few) : "") << ","
          << format_double(row.overall - rows.front().overall) << "\n";
    }
    write_text_file(*out_csv, csv.str());
  }

  // Aligned text table for stdout.
  std::vector<std::vector<std::string>> table;
  table.push_back({"run", "strategy", "seed", "overall", "many", "medium",
                   "few", "d_overall"});
  auto fmt3 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  for (const Row& row : rows) {
    table.push_back({row.name, row.strategy, std::to_string(row.seed),
                     fmt3(row.overall),
                     row.many ? fmt3(*row.many) : "-",
                     row.medium ? fmt3(*row.medium) : "-",
                     row.few ? fmt3(*row.few) : "-",
                     fmt3(row.overall - rows.front().overall)});
  }
  std::vector<std::size_t> widths(table[0].size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  std::ostringstream text;
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      text << row[c] << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    text << "\n";
  }
  return text.str();
}

std::size_t ablation_thread_cap() {
  if (const char* env = std::getenv("LDA_FORGE_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end == env || value < 1) {
      throw ConfigError("LDA_FORGE_THREADS must be a positive integer");
    }
    return static_cast<std::size_t>(value);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace lda
