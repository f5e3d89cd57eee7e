#include "gridcascade/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include "json.hpp"

#include "gridcascade/errors.hpp"
#include "gridcascade/powerflow.hpp"

namespace gridcascade {

using nlohmann::json;

std::vector<std::size_t> CascadeSample::initial_failures() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < labels.size(); ++u) {
    if (labels[u] == 1) out.push_back(u);
  }
  return out;
}

int CascadeSample::propagated_count() const {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(), [](int g) { return g > 1; }));
}

void validate_sample(const CascadeSample& s) {
  if (s.labels.empty()) fail(ErrorCategory::kInvalidSample, "sample has no labels");
  std::vector<int> per_iteration(static_cast<std::size_t>(s.max_iteration) + 1, 0);
  for (int g : s.labels) {
    if (g < 0 || g > s.max_iteration) {
      fail(ErrorCategory::kInvalidSample,
           fmt::format("label {} outside [0, {}]", g, s.max_iteration));
    }
    ++per_iteration[g];
  }
  if (s.max_iteration < 1 || per_iteration[1] == 0) {
    fail(ErrorCategory::kInvalidSample, "sample has no initial failure");
  }
  for (int g = 2; g <= s.max_iteration; ++g) {
    if (per_iteration[g] == 0) {
      fail(ErrorCategory::kInvalidSample, fmt::format("no line failed at iteration {}", g));
    }
  }
}

CascadeSample simulate_cascade(const PowerGrid& grid, std::span<const std::size_t> initial_failures,
                               std::vector<std::vector<bool>>* history) {
  const std::size_t nl = grid.line_count();
  if (initial_failures.empty()) {
    fail(ErrorCategory::kInvalidSample, "cascade needs at least one initial failure");
  }
  CascadeSample sample;
  sample.grid_name = grid.name();
  sample.labels.assign(nl, 0);
  ActiveMask active(nl, true);
  for (std::size_t l : initial_failures) {
    if (l >= nl) fail(ErrorCategory::kInvalidSample, fmt::format("line index {} out of range", l));
    sample.labels[l] = 1;
    active[l] = false;
  }
  auto record = [&] {
    if (!history) return;
    std::vector<bool> failed(nl);
    for (std::size_t l = 0; l < nl; ++l) failed[l] = !active[l];
    history->push_back(std::move(failed));
  };
  if (history) history->clear();
  record();

  int g = 1;
  for (;;) {
    FlowSolution sol;
    try {
      sol = solve_dc(grid, active);
    } catch (const Error& e) {
      fail(e.category(), fmt::format("{} (cascade iteration {})", e.what(), g + 1));
    }
    std::vector<std::size_t> tripped;
    for (std::size_t l = 0; l < nl; ++l) {
      if (active[l] && std::abs(sol.flow[l]) > grid.lines()[l].capacity) tripped.push_back(l);
    }
    if (tripped.empty()) break;
    ++g;
    for (std::size_t l : tripped) {
      sample.labels[l] = g;
      active[l] = false;
    }
    record();
  }
  sample.max_iteration = g;
  return sample;
}

std::vector<std::size_t> draw_initial_failures(std::size_t line_count, KRange k, Rng& rng) {
  if (k.min < 1 || k.max < k.min) fail(ErrorCategory::kConfig, "invalid initial-failure range");
  const std::size_t lo = static_cast<std::size_t>(k.min);
  const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(k.max), line_count);
  const std::size_t count = lo >= hi ? std::min(lo, line_count) : lo + uniform_index(rng, hi - lo + 1);
  std::vector<std::size_t> perm(line_count);
  for (std::size_t i = 0; i < line_count; ++i) perm[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(perm[i], perm[i + uniform_index(rng, line_count - i)]);
  }
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  return perm;
}

double DepthWeight::operator()(int depth) const { return std::pow(static_cast<double>(depth), exponent); }

std::vector<std::size_t> weighted_resample(std::span<const CascadeSample> pool, std::size_t count,
                                           DepthWeight weight, Rng& rng) {
  if (pool.empty()) fail(ErrorCategory::kDataset, "cannot resample an empty pool");
  std::vector<double> cumulative(pool.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    total += weight(pool[i].max_iteration);
    cumulative[i] = total;
  }
  std::vector<std::size_t> picks(count);
  for (auto& p : picks) {
    const double r = uniform01(rng) * total;
    p = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) -
                                 cumulative.begin());
    p = std::min(p, pool.size() - 1);
  }
  return picks;
}

std::string role_name(DatasetRole r) {
  switch (r) {
    case DatasetRole::kTraining: return "training";
    case DatasetRole::kHeldout: return "heldout";
    case DatasetRole::kExposure: return "exposure";
  }
  return "training";
}

DatasetRole parse_role(const std::string& s) {
  if (s == "training") return DatasetRole::kTraining;
  if (s == "heldout") return DatasetRole::kHeldout;
  if (s == "exposure") return DatasetRole::kExposure;
  fail(ErrorCategory::kDataset, fmt::format("unknown dataset role '{}'", s));
}

namespace {

/// Simulates jobs [first, first + n) of a seed stream; results land in job
/// order, so the output does not depend on the thread count.
std::vector<CascadeSample> simulate_jobs(const PowerGrid& grid, std::uint64_t stream_seed,
                                         std::size_t first, std::size_t n, KRange k,
                                         unsigned threads) {
  std::vector<CascadeSample> out(n);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      const std::uint64_t job_seed = derive_seed(stream_seed, "cascade-job", first + i);
      Rng rng(job_seed);
      const auto init = draw_initial_failures(grid.line_count(), k, rng);
      out[i] = simulate_cascade(grid, init);
      out[i].seed = job_seed;
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2) {
    work(0, 1);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

Dataset build_training_dataset(std::span<const PowerGrid> grids, const TrainingDatasetOptions& opt) {
  if (opt.cap == 0) fail(ErrorCategory::kDataset, "cap must be positive");
  if (grids.empty()) fail(ErrorCategory::kDataset, "no training grids");
  Dataset ds;
  ds.role = DatasetRole::kTraining;
  ds.provenance = {opt.seed, opt.pool_per_grid, opt.cap, opt.k_range, 0, 0, {}};
  for (std::size_t gi = 0; gi < grids.size(); ++gi) {
    const PowerGrid& grid = grids[gi];
    ds.provenance.grids.push_back(grid.name());
    const std::uint64_t stream = derive_seed(opt.seed, "training-pool", gi);
    auto simulated = simulate_jobs(grid, stream, 0, opt.pool_per_grid, opt.k_range, opt.threads);
    std::vector<CascadeSample> pool;
    for (auto& s : simulated) {
      if (s.max_iteration < 2) {
        ++ds.provenance.discarded_shallow;
      } else if (s.max_iteration > opt.max_label) {
        ++ds.provenance.discarded_deep;
      } else {
        pool.push_back(std::move(s));
      }
    }
    if (pool.empty()) {
      fail(ErrorCategory::kDataset,
           fmt::format("grid '{}': no propagating cascades; lower capacity_factor", grid.name()));
    }
    Rng rng(derive_seed(opt.seed, "training-resample", gi));
    for (std::size_t pick : weighted_resample(pool, opt.cap, opt.weight, rng)) {
      ds.samples.push_back(pool[pick]);
    }
  }
  return ds;
}

Dataset build_cascade_pool(const PowerGrid& grid, std::size_t n, KRange k_range, std::uint64_t seed,
                           DatasetRole role, unsigned threads) {
  Dataset ds;
  ds.role = role;
  ds.provenance = {seed, 0, n, k_range, 0, 0, {grid.name()}};
  const std::uint64_t stream = derive_seed(seed, role_name(role));
  // Rounds continue one job numbering, so the pool does not depend on batching.
  std::size_t next_job = 0;
  const std::size_t max_jobs = std::max<std::size_t>(50 * n, 1000);
  while (ds.samples.size() < n) {
    if (next_job >= max_jobs) {
      fail(ErrorCategory::kDataset,
           fmt::format("grid '{}': no propagating cascades; lower capacity_factor", grid.name()));
    }
    const std::size_t batch = std::max<std::size_t>(n - ds.samples.size(), 16);
    auto sims = simulate_jobs(grid, stream, next_job, batch, k_range, threads);
    next_job += batch;
    ds.provenance.pool_size += batch;
    for (auto& s : sims) {
      if (ds.samples.size() == n) break;
      if (s.max_iteration < 2) {
        ++ds.provenance.discarded_shallow;
      } else {
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

PoolStatistics pool_statistics(std::span<const CascadeSample> samples, std::size_t line_count) {
  PoolStatistics st;
  if (samples.empty() || line_count == 0) return st;
  for (const auto& s : samples) {
    st.mean_scale += static_cast<double>(s.propagated_count()) / static_cast<double>(line_count);
    st.mean_depth += s.max_iteration;
    st.max_depth = std::max(st.max_depth, s.max_iteration);
  }
  st.mean_scale /= static_cast<double>(samples.size());
  st.mean_depth /= static_cast<double>(samples.size());
  return st;
}

void write_samples_jsonl(std::span<const CascadeSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::kDataset, fmt::format("cannot write {}", path.string()));
  for (const auto& s : samples) {
    out << json{{"grid", s.grid_name}, {"seed", s.seed}, {"labels", s.labels}}.dump() << '\n';
  }
}

std::vector<CascadeSample> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("cannot open {}", path.string()));
  std::vector<CascadeSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      CascadeSample s;
      s.grid_name = j.at("grid").get<std::string>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.labels = j.at("labels").get<std::vector<int>>();
      s.max_iteration = s.labels.empty() ? 0 : *std::max_element(s.labels.begin(), s.labels.end());
      validate_sample(s);
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: {}", path.filename().string(), line_no, e.what()));
    } catch (const Error& e) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: {}", path.filename().string(), line_no, e.what()));
    }
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_samples_jsonl(ds.samples, dir / "samples.jsonl");
  const auto& p = ds.provenance;
  json manifest = {
      {"role", role_name(ds.role)},
      {"sample_count", ds.samples.size()},
      {"provenance",
       {{"seed", p.seed},
        {"pool_size", p.pool_size},
        {"cap", p.cap},
        {"k_min", p.k_range.min},
        {"k_max", p.k_range.max},
        {"discarded_shallow", p.discarded_shallow},
        {"discarded_deep", p.discarded_deep},
        {"grids", p.grids}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    fail(ErrorCategory::kMissingArtifact, fmt::format("dataset manifest not found in {}", dir.string()));
  }
  Dataset ds;
  try {
    const json m = json::parse(in);
    ds.role = parse_role(m.at("role").get<std::string>());
    const json& p = m.at("provenance");
    ds.provenance.seed = p.at("seed").get<std::uint64_t>();
    ds.provenance.pool_size = p.at("pool_size").get<std::size_t>();
    ds.provenance.cap = p.at("cap").get<std::size_t>();
    ds.provenance.k_range = {p.at("k_min").get<int>(), p.at("k_max").get<int>()};
    ds.provenance.discarded_shallow = p.at("discarded_shallow").get<std::size_t>();
    ds.provenance.discarded_deep = p.at("discarded_deep").get<std::size_t>();
    ds.provenance.grids = p.at("grids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCategory::kParse, fmt::format("manifest.json: {}", e.what()));
  }
  ds.samples = read_samples_jsonl(dir / "samples.jsonl");
  if (ds.role == DatasetRole::kTraining) {
    for (const auto& s : ds.samples) {
      if (s.max_iteration < 2) fail(ErrorCategory::kDataset, "training dataset contains a G=1 sample");
    }
  }
  return ds;
}

}  // namespace gridcascade
