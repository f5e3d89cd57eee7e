#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gridcascade/cascade.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/model.hpp"

namespace gridcascade {

/// Minimal TOML reader: `[table]`, `[[array.of.tables]]`, `key = value` with
/// strings, integers, floats, booleans and flat arrays of scalars, `#`
/// comments. Enough for experiment configs; not a general TOML parser.
namespace toml {

struct Value;
using Array = std::vector<Value>;
using Table = std::map<std::string, Value>;

struct Value {
  std::variant<std::string, std::int64_t, double, bool, Array, Table, std::vector<Table>> data;

  bool is_table() const { return std::holds_alternative<Table>(data); }
  const Table& table() const { return std::get<Table>(data); }
};

Table parse(const std::string& text, const std::string& source = "<config>");
Table parse_file(const std::filesystem::path& path);

}  // namespace toml

/// A grid is either generated from a synthetic spec or loaded from a
/// directory holding buses.csv and lines.csv.
struct GridSource {
  SyntheticGridSpec spec;
  std::optional<std::filesystem::path> path;
  std::string name;  // resolved name used for file layout
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "runs/default";
  unsigned threads = 1;

  std::vector<GridSource> training_grids;
  std::vector<GridSource> evaluation_grids;

  std::size_t pool_per_grid = 2000;
  std::size_t cap = 5000;
  KRange k_range;
  double depth_exponent = 1.0;
  std::size_t holdout_size = 300;

  ModelConfig model;

  std::size_t exposure_samples = 100;
  bool mask_self_loops = true;

  std::vector<double> tau_percent{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::size_t> ns_list{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};

  /// Canonical JSON of every field; the config hash is taken over this.
  std::string canonical_json() const;
  std::string hash() const;
};

/// Throws kConfig on unknown keys, bad types or inconsistent values. Relative
/// grid paths resolve against the config file's directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir = ".");

}  // namespace gridcascade
