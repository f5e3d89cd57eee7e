#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridcascade/cascade.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/ranking.hpp"

namespace gridcascade {

enum class VulBin { kTotal, kShallow, kDeep };

std::string bin_name(VulBin b);

/// Per-line failure frequencies over a held-out pool. A line counts as
/// failed in a cascade when g >= 2; shallow when g <= cutoff, deep otherwise.
struct VulnerabilityTable {
  std::vector<int> line_id;
  std::vector<double> total;
  std::vector<double> shallow;
  std::vector<double> deep;
  double avg_scale = 0.0;  // mean fraction of lines with g >= 2
  double avg_depth = 0.0;  // mean G
  int cutoff = 0;
  std::size_t pool_size = 0;

  const std::vector<double>& bin(VulBin b) const;
};

/// `cutoff` defaults to floor(mean G) of the pool.
VulnerabilityTable ground_truth_vulnerability(const PowerGrid& grid, std::span<const CascadeSample> holdout,
                                              std::optional<int> cutoff = {});

/// Mean vulnerability of the ceil(tau/100 * L) top-ranked lines.
double mean_top_tau(const Ranking& ranking, const VulnerabilityTable& vul, double tau_percent,
                    VulBin bin = VulBin::kTotal);

struct HighExposureSet {
  std::vector<std::size_t> members;  // line positions
  double threshold = 0.0;
};

/// Lines whose vulnerability strictly exceeds the median over lines that
/// failed at least once (within the bin).
HighExposureSet high_exposure_set(const VulnerabilityTable& vul, VulBin bin = VulBin::kTotal);

double mean_percentile_rank(const Ranking& ranking, const HighExposureSet& set);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Overlap of the top-tau lines with a high-exposure set.
PrecisionRecall top_tau_precision_recall(const Ranking& ranking, const HighExposureSet& set, double tau_percent);

/// Kendall tau-a between two rankings of the same lines.
double kendall_tau(const Ranking& a, const Ranking& b);

/// Unweighted mean of per-class F1 over the classes present in either
/// `truth` or `predicted`.
double macro_f1(std::span<const int> truth, std::span<const int> predicted);

struct EfficiencyPoint {
  std::size_t sample_count = 0;
  double top10 = 0.0;
  double kendall_vs_max = 0.0;
};

/// Exposure aggregated from the first N_s samples for each N_s in `ns_list`.
/// `attention` holds the per-sample masked attention of `samples`.
std::vector<EfficiencyPoint> sample_efficiency_sweep(const PowerGrid& grid,
                                                     std::span<const std::vector<double>> attention,
                                                     std::span<const CascadeSample> samples,
                                                     const VulnerabilityTable& vul,
                                                     std::span<const std::size_t> ns_list);

struct MetricRow {
  std::string grid;
  std::string method;
  std::string metric;
  std::string parameter;
  double value = 0.0;
};

/// grid,method,metric,parameter,value
void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

void write_vulnerability_csv(const VulnerabilityTable& vul, const std::filesystem::path& path);

}  // namespace gridcascade
