#include "lda/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lda/error.hpp"
#include "lda/rng.hpp"
#include "json.hpp"

namespace lda {

namespace {

constexpr std::uint64_t kCenterStream = 0xc3;
constexpr std::uint64_t kTrainStream = 0x7a;
constexpr std::uint64_t kTestStream = 0x7e;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::vector<std::size_t> LongTailDataset::train_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == SplitTag::train) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> LongTailDataset::test_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == SplitTag::test) rows.push_back(i);
  return rows;
}

std::size_t LongTailDataset::train_size() const {
  std::size_t n = 0;
  for (std::size_t c : class_counts) n += c;
  return n;
}

std::vector<double> LongTailDataset::empirical_prior() const {
  const double total = static_cast<double>(train_size());
  std::vector<double> prior(class_counts.size());
  for (std::size_t c = 0; c < class_counts.size(); ++c)
    prior[c] = static_cast<double>(class_counts[c]) / total;
  return prior;
}

std::vector<std::size_t> make_profile(const ImbalanceProfile& profile) {
  if (profile.num_classes < 2) {
    throw ConfigError("profile: need at least 2 classes, got " +
                      std::to_string(profile.num_classes));
  }
  if (profile.imbalance_ratio < 1.0) {
    throw ConfigError("profile: IR must be >= 1, got " +
                      std::to_string(profile.imbalance_ratio));
  }
  if (static_cast<double>(profile.max_count) < profile.imbalance_ratio) {
    throw ConfigError("profile: max_count " + std::to_string(profile.max_count) +
                      " is below IR " + std::to_string(profile.imbalance_ratio));
  }
  const std::size_t c_total = profile.num_classes;
  std::vector<std::size_t> counts(c_total);
  counts[0] = profile.max_count;
  for (std::size_t c = 1; c < c_total; ++c) {
    const double expo = -static_cast<double>(c) / static_cast<double>(c_total - 1);
    const double raw = static_cast<double>(profile.max_count) *
                       std::pow(profile.imbalance_ratio, expo);
    counts[c] = static_cast<std::size_t>(std::max<long long>(1, std::llround(raw)));
  }
  return counts;
}

std::vector<double> synth_centers(const SynthSpec& spec) {
  const std::size_t c_total = spec.profile.num_classes;
  std::vector<double> centers(c_total * spec.dim);
  for (std::size_t c = 0; c < c_total; ++c) {
    Rng rng(mix_seed({spec.seed, kCenterStream, c}));
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      const double v = rng.next_gaussian();
      centers[c * spec.dim + j] = v;
      norm_sq += v * v;
    }
    const double inv_norm = spec.center_scale / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < spec.dim; ++j) centers[c * spec.dim + j] *= inv_norm;
  }
  return centers;
}

LongTailDataset synth_gaussian(const SynthSpec& spec) {
  if (spec.dim < 2) {
    throw ConfigError("synth: dim must be >= 2, got " + std::to_string(spec.dim));
  }
  if (spec.test_per_class < 1) {
    throw ConfigError("synth: test_per_class must be >= 1");
  }
  const std::vector<std::size_t> counts = make_profile(spec.profile);
  const std::vector<double> centers = synth_centers(spec);
  const std::size_t c_total = spec.profile.num_classes;

  LongTailDataset ds;
  ds.num_classes = c_total;
  ds.dim = spec.dim;
  ds.class_counts = counts;
  ds.test_per_class = spec.test_per_class;

  auto emit = [&](std::size_t cls, std::uint64_t stream, std::size_t index,
                  SplitTag tag) {
    Rng rng(mix_seed({spec.seed, stream, cls, index}));
    for (std::size_t j = 0; j < spec.dim; ++j) {
      ds.features.push_back(centers[cls * spec.dim + j] +
                            spec.noise_sigma * rng.next_gaussian());
    }
    ds.labels.push_back(static_cast<int>(cls));
    ds.split.push_back(tag);
  };

  for (std::size_t c = 0; c < c_total; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) emit(c, kTrainStream, i, SplitTag::train);
  for (std::size_t c = 0; c < c_total; ++c)
    for (std::size_t i = 0; i < spec.test_per_class; ++i)
      emit(c, kTestStream, i, SplitTag::test);
  return ds;
}

namespace {

struct ParsedRow {
  int label;
  std::vector<double> values;
};

bool parse_row(const std::string& line, ParsedRow& out) {
  out.values.clear();
  std::size_t start = 0;
  bool first = true;
  while (start <= line.size()) {
    std::size_t comma = line.find(',', start);
    std::size_t end = comma == std::string::npos ? line.size() : comma;
    std::size_t a = start, b = end;
    while (a < b && std::isspace(static_cast<unsigned char>(line[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(line[b - 1]))) --b;
    if (a == b) return false;
    if (first) {
      int label = 0;
      auto [p, ec] = std::from_chars(line.data() + a, line.data() + b, label);
      if (ec != std::errc() || p != line.data() + b) return false;
      out.label = label;
      first = false;
    } else {
      double v = 0.0;
      auto [p, ec] = std::from_chars(line.data() + a, line.data() + b, v);
      if (ec != std::errc() || p != line.data() + b) return false;
      out.values.push_back(v);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return !first;
}

}  // namespace

LongTailDataset ingest_csv(const std::filesystem::path& path,
                           const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::vector<ParsedRow> rows;
  std::vector<std::string> bad_lines;
  std::string line;
  std::size_t line_no = 0;
  bool skipped_header = false;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (schema.has_header && !skipped_header) {
      skipped_header = true;
      continue;
    }
    ParsedRow row;
    if (!parse_row(line, row)) {
      if (bad_lines.size() < 10)
        bad_lines.push_back("line " + std::to_string(line_no) + ": " + line);
      continue;
    }
    if (dim == 0) dim = row.values.size();
    const bool label_out_of_range =
        row.label < 0 ||
        (schema.num_classes &&
         static_cast<std::size_t>(row.label) >= *schema.num_classes);
    if (row.values.size() != dim || label_out_of_range) {
      if (bad_lines.size() < 10)
        bad_lines.push_back("line " + std::to_string(line_no) + ": " + line);
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (!bad_lines.empty()) {
    std::string msg = "malformed rows in " + path.string() + ":";
    for (const auto& b : bad_lines) msg += "\n  " + b;
    throw ParseError(msg);
  }
  if (rows.empty()) throw ParseError("no data rows in " + path.string());

  std::size_t c_total = 0;
  for (const auto& r : rows)
    c_total = std::max(c_total, static_cast<std::size_t>(r.label) + 1);
  if (schema.num_classes) c_total = *schema.num_classes;

  // The last test_per_class occurrences of each class form the test split.
  std::vector<std::size_t> seen(c_total, 0);
  for (const auto& r : rows) ++seen[static_cast<std::size_t>(r.label)];
  for (std::size_t c = 0; c < c_total; ++c) {
    if (seen[c] < schema.test_per_class + 1) {
      throw ParseError("class " + std::to_string(c) + " has " +
                       std::to_string(seen[c]) + " rows; needs at least " +
                       std::to_string(schema.test_per_class + 1) +
                       " (test split + 1 training sample)");
    }
  }

  LongTailDataset ds;
  ds.num_classes = c_total;
  ds.dim = dim;
  ds.test_per_class = schema.test_per_class;
  ds.class_counts.assign(c_total, 0);
  std::vector<std::size_t> remaining = seen;
  for (const auto& r : rows) {
    const auto cls = static_cast<std::size_t>(r.label);
    const bool is_test = remaining[cls] <= schema.test_per_class;
    --remaining[cls];
    ds.features.insert(ds.features.end(), r.values.begin(), r.values.end());
    ds.labels.push_back(r.label);
    ds.split.push_back(is_test ? SplitTag::test : SplitTag::train);
    if (!is_test) ++ds.class_counts[cls];
  }
  return ds;
}

void export_dataset(const LongTailDataset& dataset,
                    const std::filesystem::path& dir,
                    const std::optional<SynthSpec>& provenance) {
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / "data.csv";
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << "label";
  for (std::size_t j = 0; j < dataset.dim; ++j) out << ",f_" << j;
  out << "\n";
  auto write_row = [&](std::size_t i) {
    out << dataset.labels[i];
    const auto row = dataset.row(i);
    for (double v : row) out << "," << format_double(v);
    out << "\n";
  };
  // Train rows first so re-ingesting with the same test_per_class reproduces
  // the split (ingest takes the last occurrences of each class as test).
  for (std::size_t i = 0; i < dataset.num_rows(); ++i)
    if (dataset.split[i] == SplitTag::train) write_row(i);
  std::vector<std::size_t> test = dataset.test_rows();
  std::stable_sort(test.begin(), test.end(), [&](std::size_t a, std::size_t b) {
    return dataset.labels[a] < dataset.labels[b];
  });
  for (std::size_t i : test) write_row(i);
  out.close();

  nlohmann::ordered_json manifest;
  manifest["num_classes"] = dataset.num_classes;
  manifest["dim"] = dataset.dim;
  manifest["class_counts"] = dataset.class_counts;
  manifest["test_per_class"] = dataset.test_per_class;
  if (provenance) {
    manifest["generator"] = {
        {"kind", "gaussian"},
        {"max_count", provenance->profile.max_count},
        {"imbalance_ratio", provenance->profile.imbalance_ratio},
        {"center_scale", provenance->center_scale},
        {"noise_sigma", provenance->noise_sigma},
        {"seed", provenance->seed},
    };
  } else {
    manifest["generator"] = {{"kind", "ingested"}};
  }
  const auto manifest_path = dir / "manifest.json";
  std::ofstream mout(manifest_path);
  if (!mout) throw IoError("cannot write " + manifest_path.string());
  mout << manifest.dump(2) << "\n";
}

LongTailDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
  }
  CsvSchema schema;
  schema.has_header = true;
  schema.test_per_class = manifest.at("test_per_class").get<std::size_t>();
  schema.num_classes = manifest.at("num_classes").get<std::size_t>();
  LongTailDataset ds = ingest_csv(dir / "data.csv", schema);
  const auto counts = manifest.at("class_counts").get<std::vector<std::size_t>>();
  if (counts != ds.class_counts) {
    throw ParseError("manifest class_counts disagree with data.csv in " +
                     dir.string());
  }
  return ds;
}

Sampler::Sampler(const LongTailDataset& dataset, SamplerMode mode,
                 std::size_t batch_size, std::uint64_t seed)
    : dataset_(&dataset), mode_(mode), batch_size_(batch_size), seed_(seed) {
  const std::size_t n = dataset.train_size();
  if (batch_size_ < 1 || batch_size_ > n) {
    throw ConfigError("sampler: batch_size " + std::to_string(batch_size_) +
                      " out of range for " + std::to_string(n) + " train rows");
  }
  steps_per_epoch_ = (n + batch_size_ - 1) / batch_size_;
  if (mode_ == SamplerMode::instance_random) {
    permutation_ = dataset.train_rows();
  } else {
    by_class_.resize(dataset.num_classes);
    for (std::size_t i : dataset.train_rows())
      by_class_[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }
  begin_epoch(0);
}

void Sampler::begin_epoch(std::size_t epoch) {
  epoch_ = epoch;
  if (mode_ == SamplerMode::instance_random) {
    std::sort(permutation_.begin(), permutation_.end());
    Rng rng(mix_seed({seed_, 0x5e9, epoch}));
    for (std::size_t i = permutation_.size(); i > 1; --i) {
      const std::size_t j = rng.next_below(i);
      std::swap(permutation_[i - 1], permutation_[j]);
    }
  }
}

std::vector<std::size_t> Sampler::batch(std::size_t step) const {
  if (mode_ == SamplerMode::instance_random) {
    const std::size_t begin = step * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, permutation_.size());
    return {permutation_.begin() + begin, permutation_.begin() + end};
  }
  Rng rng(mix_seed({seed_, 0xcb5, epoch_, step}));
  std::vector<std::size_t> rows(batch_size_);
  for (std::size_t k = 0; k < batch_size_; ++k) {
    const auto cls = rng.next_below(dataset_->num_classes);
    const auto& members = by_class_[cls];
    rows[k] = members[rng.next_below(members.size())];
  }
  return rows;
}

}  // namespace lda
