#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lda {

enum class SplitTag : std::uint8_t { train, test };

// Long-tailed feature dataset: n-by-d feature matrix, integer labels, a
// per-row train/test tag and per-class training counts. The test split is
// exactly balanced. Immutable after construction.
struct LongTailDataset {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // row-major n-by-dim
  std::vector<int> labels;
  std::vector<SplitTag> split;
  std::vector<std::size_t> class_counts;  // training occurrences per class
  std::size_t test_per_class = 0;

  std::size_t num_rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  std::vector<std::size_t> train_rows() const;
  std::vector<std::size_t> test_rows() const;
  std::size_t train_size() const;

  // Empirical class prior over the training split; sums to 1.
  std::vector<double> empirical_prior() const;
};

// Parameters of a long-tailed class-count profile.
struct ImbalanceProfile {
  std::size_t num_classes = 0;
  std::size_t max_count = 0;
  double imbalance_ratio = 1.0;
};

// counts[c] = round(max_count * IR^(-c/(C-1))), clamped to at least 1.
std::vector<std::size_t> make_profile(const ImbalanceProfile& profile);

struct SynthSpec {
  ImbalanceProfile profile;
  std::size_t dim = 16;
  double center_scale = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  std::size_t test_per_class = 32;
};

// Gaussian-mixture generator: class c is an isotropic Gaussian around a
// seeded random direction of norm center_scale. Bit-identical per seed.
LongTailDataset synth_gaussian(const SynthSpec& spec);

// Class centers used by synth_gaussian, one row per class (for oracles).
std::vector<double> synth_centers(const SynthSpec& spec);

struct CsvSchema {
  bool has_header = false;
  std::size_t test_per_class = 0;
  // If unset, the class count is inferred as max label + 1.
  std::optional<std::size_t> num_classes;
};

// Parses rows of `label, f_1, ..., f_d`. The last test_per_class occurrences
// of each class become the balanced test split. Malformed rows abort with a
// ParseError listing the first 10 offending line numbers.
LongTailDataset ingest_csv(const std::filesystem::path& path,
                           const CsvSchema& schema);

// Writes data.csv (train rows first, then test rows grouped by class) plus a
// manifest.json sidecar. Feature values round-trip exactly.
void export_dataset(const LongTailDataset& dataset,
                    const std::filesystem::path& dir,
                    const std::optional<SynthSpec>& provenance = std::nullopt);

// Reads a directory written by export_dataset (manifest.json + data.csv).
LongTailDataset load_dataset(const std::filesystem::path& dir);

enum class SamplerMode { instance_random, class_balanced };

// Mini-batch index stream over the training split. instance_random draws a
// fresh permutation per epoch (the trailing batch may be short);
// class_balanced draws a uniform class then a uniform member, with
// replacement. Deterministic per (seed, epoch, step).
class Sampler {
 public:
  Sampler(const LongTailDataset& dataset, SamplerMode mode,
          std::size_t batch_size, std::uint64_t seed);

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  void begin_epoch(std::size_t epoch);
  std::vector<std::size_t> batch(std::size_t step) const;

 private:
  const LongTailDataset* dataset_;
  SamplerMode mode_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t steps_per_epoch_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> permutation_;           // instance_random
  std::vector<std::vector<std::size_t>> by_class_;  // class_balanced
};

}  // namespace lda
