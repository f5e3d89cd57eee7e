#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gridcascade/config.hpp"
#include "gridcascade/grid.hpp"

namespace gridcascade {

inline constexpr const char* kToolVersion = "0.1.0";

/// Seed stream tags. Each stage draws from its own tag so that, for example,
/// exposure samples and held-out cascades never share a stream.
namespace stream {
inline constexpr const char* kTraining = "training";
inline constexpr const char* kModel = "model";
inline constexpr const char* kExposure = "exposure";
inline constexpr const char* kHoldout = "holdout";
}  // namespace stream

/// Written to `<out>/manifest.json` after every stage.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> seed_streams;  // "<tag>" or "<tag>/<grid>"
  std::map<std::string, double> stage_seconds;
  std::vector<std::string> artifacts;  // relative to the output directory, sorted
  std::map<std::string, std::string> notes;

  void add_artifact(const std::string& relative);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

/// Checks that every listed artifact exists, that every CSV has a header and
/// rows of equal width, and that the seed streams are pairwise distinct.
/// Returns the problems found; empty means clean.
std::vector<std::string> audit_manifest(const std::filesystem::path& out_dir);

using ProgressCallback = std::function<void(const std::string&)>;

/// Stage runner over one output directory. Each stage reads its inputs from
/// disk, so stages may run in separate processes.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, ProgressCallback progress = {});

  const ExperimentConfig& config() const noexcept { return config_; }
  const std::filesystem::path& out_dir() const noexcept { return config_.out_dir; }
  const RunManifest& manifest() const noexcept { return manifest_; }

  void grid_gen();
  void dataset_build();
  void train();
  void exposure();
  void baseline();
  void evaluate();
  void report();
  void run_all();

  // Layout.
  std::filesystem::path grid_dir(const std::string& name) const;
  std::filesystem::path dataset_dir() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path eval_dir(const std::string& name) const;
  std::filesystem::path metrics_path() const;
  std::filesystem::path report_dir() const;

 private:
  PowerGrid load_stage_grid(const GridSource& g) const;
  void write_file(const std::filesystem::path& path, const std::string& content);
  void record(const std::filesystem::path& path);
  void timed(const std::string& stage, const std::function<void()>& body);
  void say(const std::string& msg) const;

  ExperimentConfig config_;
  ProgressCallback progress_;
  RunManifest manifest_;
};

}  // namespace gridcascade
