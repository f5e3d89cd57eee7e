#include "gridcascade/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"
#include "gridcascade/exposure.hpp"

namespace gridcascade {

std::string bin_name(VulBin b) {
  switch (b) {
    case VulBin::kTotal: return "total";
    case VulBin::kShallow: return "shallow";
    case VulBin::kDeep: return "deep";
  }
  return "total";
}

const std::vector<double>& VulnerabilityTable::bin(VulBin b) const {
  switch (b) {
    case VulBin::kShallow: return shallow;
    case VulBin::kDeep: return deep;
    default: return total;
  }
}

VulnerabilityTable ground_truth_vulnerability(const PowerGrid& grid, std::span<const CascadeSample> holdout,
                                              std::optional<int> cutoff) {
  if (holdout.empty()) fail(ErrorCategory::kEvaluation, "empty held-out pool");
  const std::size_t n = grid.line_count();
  VulnerabilityTable vt;
  vt.line_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) vt.line_id[i] = grid.lines()[i].id;
  const PoolStatistics stats = pool_statistics(holdout, n);
  vt.avg_scale = stats.mean_scale;
  vt.avg_depth = stats.mean_depth;
  vt.cutoff = cutoff ? *cutoff : static_cast<int>(std::floor(stats.mean_depth));
  vt.pool_size = holdout.size();
  std::vector<std::size_t> total(n, 0), shallow(n, 0), deep(n, 0);
  for (const auto& s : holdout) {
    if (s.labels.size() != n) {
      fail(ErrorCategory::kShape, fmt::format("held-out sample has {} labels, grid has {} lines", s.labels.size(), n));
    }
    for (std::size_t v = 0; v < n; ++v) {
      const int g = s.labels[v];
      if (g < 2) continue;
      ++total[v];
      ++(g <= vt.cutoff ? shallow : deep)[v];
    }
  }
  const auto m = static_cast<double>(holdout.size());
  auto frac = [m](const std::vector<std::size_t>& c) {
    std::vector<double> out(c.size());
    std::transform(c.begin(), c.end(), out.begin(), [m](std::size_t x) { return static_cast<double>(x) / m; });
    return out;
  };
  vt.total = frac(total);
  vt.shallow = frac(shallow);
  vt.deep = frac(deep);
  return vt;
}

namespace {

std::size_t top_count(double tau_percent, std::size_t lines) {
  if (!(tau_percent > 0.0 && tau_percent <= 100.0)) {
    fail(ErrorCategory::kEvaluation, fmt::format("tau {} outside (0, 100]", tau_percent));
  }
  // Round away representation noise so that e.g. 10% of 30 lines is exactly 3.
  const double raw = tau_percent / 100.0 * static_cast<double>(lines);
  const double nearest = std::round(raw);
  const double n = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

}  // namespace

double mean_top_tau(const Ranking& ranking, const VulnerabilityTable& vul, double tau_percent, VulBin bin) {
  const auto& v = vul.bin(bin);
  if (ranking.size() != v.size()) fail(ErrorCategory::kShape, "ranking and vulnerability table differ in size");
  const std::size_t n = top_count(tau_percent, v.size());
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += v[ranking.order[k]];
  return s / static_cast<double>(n);
}

HighExposureSet high_exposure_set(const VulnerabilityTable& vul, VulBin bin) {
  const auto& v = vul.bin(bin);
  std::vector<double> failed;
  for (double x : v) {
    if (x > 0.0) failed.push_back(x);
  }
  if (failed.empty()) fail(ErrorCategory::kEvaluation, fmt::format("no line failed in the {} bin", bin_name(bin)));
  std::sort(failed.begin(), failed.end());
  const std::size_t m = failed.size();
  HighExposureSet set;
  set.threshold = m % 2 == 1 ? failed[m / 2] : 0.5 * (failed[m / 2 - 1] + failed[m / 2]);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > set.threshold) set.members.push_back(i);
  }
  return set;
}

double mean_percentile_rank(const Ranking& ranking, const HighExposureSet& set) {
  if (set.members.empty()) fail(ErrorCategory::kEvaluation, "empty high-exposure set");
  double s = 0.0;
  for (std::size_t v : set.members) s += ranking.rank.at(v);
  return s / static_cast<double>(set.members.size()) / static_cast<double>(ranking.size());
}

PrecisionRecall top_tau_precision_recall(const Ranking& ranking, const HighExposureSet& set, double tau_percent) {
  if (set.members.empty()) fail(ErrorCategory::kEvaluation, "empty high-exposure set");
  const std::size_t n = top_count(tau_percent, ranking.size());
  const std::set<std::size_t> members(set.members.begin(), set.members.end());
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) hits += members.count(ranking.order[k]);
  return {static_cast<double>(hits) / static_cast<double>(n),
          static_cast<double>(hits) / static_cast<double>(members.size())};
}

double kendall_tau(const Ranking& a, const Ranking& b) {
  const std::size_t n = a.size();
  if (b.size() != n || n < 2) fail(ErrorCategory::kEvaluation, "Kendall tau needs two rankings of equal size >= 2");
  long long score = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const long long da = a.rank[i] < a.rank[j] ? 1 : -1;
      const long long db = b.rank[i] < b.rank[j] ? 1 : -1;
      score += da * db;
    }
  }
  return static_cast<double>(score) / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double macro_f1(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    fail(ErrorCategory::kEvaluation, "macro-F1 needs equally sized non-empty label vectors");
  }
  std::map<int, std::array<std::size_t, 3>> counts;  // tp, fp, fn
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++counts[truth[i]][0];
    } else {
      ++counts[predicted[i]][1];
      ++counts[truth[i]][2];
    }
  }
  double sum = 0.0;
  for (const auto& [cls, c] : counts) {
    const double denom = 2.0 * static_cast<double>(c[0]) + static_cast<double>(c[1] + c[2]);
    sum += denom > 0.0 ? 2.0 * static_cast<double>(c[0]) / denom : 0.0;
  }
  return sum / static_cast<double>(counts.size());
}

std::vector<EfficiencyPoint> sample_efficiency_sweep(const PowerGrid& grid,
                                                     std::span<const std::vector<double>> attention,
                                                     std::span<const CascadeSample> samples,
                                                     const VulnerabilityTable& vul,
                                                     std::span<const std::size_t> ns_list) {
  if (ns_list.empty()) fail(ErrorCategory::kEvaluation, "empty N_s list");
  const std::size_t max_ns = *std::max_element(ns_list.begin(), ns_list.end());
  if (max_ns > samples.size()) {
    fail(ErrorCategory::kEvaluation,
         fmt::format("sample pool of {} is smaller than N_s = {}", samples.size(), max_ns));
  }
  const Ranking reference = aggregate_attention(grid, attention, samples, max_ns);
  std::vector<EfficiencyPoint> out;
  for (std::size_t ns : ns_list) {
    const Ranking r = aggregate_attention(grid, attention, samples, ns);
    out.push_back({ns, mean_top_tau(r, vul, 10.0), kendall_tau(r, reference)});
  }
  return out;
}

void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "grid,method,metric,parameter,value\n";
  for (const auto& r : rows) out << fmt::format("{},{},{},{},{}\n", r.grid, r.method, r.metric, r.parameter, r.value);
  if (!out) fail(ErrorCategory::kEvaluation, fmt::format("failed writing {}", path.string()));
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("metrics not found: {}", path.string()));
  std::string line;
  std::getline(in, line);
  if (line != "grid,method,metric,parameter,value") {
    fail(ErrorCategory::kParse, fmt::format("{}: unexpected header", path.string()));
  }
  std::vector<MetricRow> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string value;
    std::getline(ss, r.grid, ',');
    std::getline(ss, r.method, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, r.parameter, ',');
    std::getline(ss, value, ',');
    try {
      r.value = std::stod(value);
    } catch (const std::logic_error&) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: bad value '{}'", path.string(), row, value));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_vulnerability_csv(const VulnerabilityTable& vul, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "line_id,total_vul,shallow_vul,deep_vul\n";
  for (std::size_t i = 0; i < vul.total.size(); ++i) {
    out << fmt::format("{},{},{},{}\n", vul.line_id[i], vul.total[i], vul.shallow[i], vul.deep[i]);
  }
}

}  // namespace gridcascade
