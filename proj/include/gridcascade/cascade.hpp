#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gridcascade/grid.hpp"
#include "gridcascade/rng.hpp"

namespace gridcascade {

/// One simulated cascade. `labels[u]` is 0 for a surviving line, 1 for an
/// initial failure and g >= 2 for a line tripped at iteration g.
struct CascadeSample {
  std::string grid_name;
  std::vector<int> labels;
  int max_iteration = 0;  // G
  std::uint64_t seed = 0;

  std::vector<std::size_t> initial_failures() const;
  /// Number of lines with label > 1.
  int propagated_count() const;

  bool operator==(const CascadeSample&) const = default;
};

/// Checks the label invariants; throws InvalidSample naming the violation.
void validate_sample(const CascadeSample& sample);

/// Runs the iterate-until-fixed-point overload cascade. When `history` is
/// given it receives the failed-line set after every iteration (index 0 is
/// iteration 1).
CascadeSample simulate_cascade(const PowerGrid& grid, std::span<const std::size_t> initial_failures,
                               std::vector<std::vector<bool>>* history = nullptr);

struct KRange {
  int min = 1;
  int max = 3;
};

/// Draws k uniformly from `k` and k distinct lines uniformly.
std::vector<std::size_t> draw_initial_failures(std::size_t line_count, KRange k, Rng& rng);

/// Sampling weight as a function of cascade depth G: G^exponent.
struct DepthWeight {
  double exponent = 1.0;
  double operator()(int depth) const;
};

/// Draws `count` indices into `pool` with replacement, proportional to weight(G).
std::vector<std::size_t> weighted_resample(std::span<const CascadeSample> pool, std::size_t count,
                                           DepthWeight weight, Rng& rng);

enum class DatasetRole { kTraining, kHeldout, kExposure };

std::string role_name(DatasetRole r);
DatasetRole parse_role(const std::string& s);

struct DatasetProvenance {
  std::uint64_t seed = 0;
  std::size_t pool_size = 0;  // simulations per grid
  std::size_t cap = 0;
  KRange k_range;
  std::size_t discarded_shallow = 0;  // G == 1
  std::size_t discarded_deep = 0;     // labels beyond the class limit
  std::vector<std::string> grids;
};

struct Dataset {
  std::vector<CascadeSample> samples;
  DatasetRole role = DatasetRole::kTraining;
  DatasetProvenance provenance;
};

struct TrainingDatasetOptions {
  std::size_t pool_per_grid = 2000;
  std::size_t cap = 5000;
  KRange k_range;
  std::uint64_t seed = 0;
  DepthWeight weight;
  int max_label = 99;  // samples with G above this are dropped
  unsigned threads = 1;
};

Dataset build_training_dataset(std::span<const PowerGrid> grids, const TrainingDatasetOptions& opt);

/// `n` propagating cascades (G >= 2) on one grid, drawn from the seed stream
/// named `tag`. Used for held-out ground truth ("holdout") and for exposure
/// extraction ("exposure").
Dataset build_cascade_pool(const PowerGrid& grid, std::size_t n, KRange k_range, std::uint64_t seed,
                           DatasetRole role, unsigned threads = 1);

inline Dataset build_holdout_pool(const PowerGrid& grid, std::size_t n, KRange k_range,
                                  std::uint64_t seed, unsigned threads = 1) {
  return build_cascade_pool(grid, n, k_range, seed, DatasetRole::kHeldout, threads);
}

struct PoolStatistics {
  double mean_scale = 0.0;  // mean fraction of lines with g >= 2
  double mean_depth = 0.0;  // mean G
  int max_depth = 0;
};

PoolStatistics pool_statistics(std::span<const CascadeSample> samples, std::size_t line_count);

/// JSON-lines: {"grid":"...","seed":123,"labels":[...]}
void write_samples_jsonl(std::span<const CascadeSample> samples, const std::filesystem::path& path);
std::vector<CascadeSample> read_samples_jsonl(const std::filesystem::path& path);

/// Directory with samples.jsonl and manifest.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace gridcascade
