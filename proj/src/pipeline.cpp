#include "gridcascade/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gridcascade/baselines.hpp"
#include "gridcascade/cascade.hpp"
#include "gridcascade/errors.hpp"
#include "gridcascade/exposure.hpp"
#include "gridcascade/metrics.hpp"
#include "gridcascade/model.hpp"
#include "gridcascade/plot.hpp"
#include "gridcascade/ranking.hpp"
#include "gridcascade/rng.hpp"
#include "json.hpp"

namespace gridcascade {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// --- manifest ---------------------------------------------------------------

void RunManifest::add_artifact(const std::string& relative) {
  auto it = std::lower_bound(artifacts.begin(), artifacts.end(), relative);
  if (it == artifacts.end() || *it != relative) artifacts.insert(it, relative);
}

void RunManifest::save(const fs::path& path) const {
  ordered_json j;
  j["tool"] = "gridcascade";
  j["tool_version"] = tool_version;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["seed_streams"] = seed_streams;
  j["stage_seconds"] = stage_seconds;
  j["artifacts"] = artifacts;
  j["notes"] = notes;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCategory::kEvaluation, fmt::format("failed writing {}", path.string()));
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("manifest not found: {}", path.string()));
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.seed_streams = j.at("seed_streams").get<std::map<std::string, std::uint64_t>>();
    m.stage_seconds = j.at("stage_seconds").get<std::map<std::string, double>>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.notes = j.at("notes").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
  return m;
}

std::vector<std::string> audit_manifest(const fs::path& out_dir) {
  std::vector<std::string> problems;
  const RunManifest m = RunManifest::load(out_dir / "manifest.json");
  for (const auto& rel : m.artifacts) {
    const fs::path p = out_dir / rel;
    if (!fs::exists(p)) {
      problems.push_back(fmt::format("missing artifact {}", rel));
      continue;
    }
    if (p.extension() != ".csv") continue;
    std::ifstream in(p);
    std::string line;
    // Leading '#' lines are comments (grid files carry their name that way).
    while (std::getline(in, line) && line.starts_with("#")) {
    }
    if (line.empty()) {
      problems.push_back(fmt::format("{} has no header", rel));
      continue;
    }
    const auto width = std::count(line.begin(), line.end(), ',');
    std::size_t row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (std::count(line.begin(), line.end(), ',') != width) {
        problems.push_back(fmt::format("{}:{} has the wrong number of columns", rel, row));
        break;
      }
    }
  }
  std::set<std::uint64_t> seeds;
  for (const auto& [tag, s] : m.seed_streams)
    if (!seeds.insert(s).second) problems.push_back(fmt::format("seed stream '{}' collides with another stream", tag));
  return problems;
}

// --- helpers -----------------------------------------------------------------

namespace {

std::string missing(const std::string& what, const fs::path& p, const char* stage) {
  return fmt::format("{} not found: {} (run `{}` first)", what, p.string(), stage);
}

void write_attention_csv(std::span<const std::vector<double>> attention, std::span<const CascadeSample> samples,
                         const PowerGrid& grid, const fs::path& path) {
  std::ofstream out(path);
  out << "sample,weight,line_id,attention\n";
  for (std::size_t k = 0; k < attention.size(); ++k)
    for (std::size_t v = 0; v < attention[k].size(); ++v)
      out << fmt::format("{},{},{},{}\n", k, cascade_weight(samples[k]), grid.lines()[v].id, attention[k][v]);
  if (!out) fail(ErrorCategory::kEvaluation, fmt::format("failed writing {}", path.string()));
}

std::vector<std::vector<double>> read_attention_csv(const fs::path& path, const PowerGrid& grid,
                                                    std::size_t sample_count) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, missing("attention", path, "exposure"));
  std::vector<std::vector<double>> out(sample_count, std::vector<double>(grid.line_count(), 0.0));
  std::string line;
  std::getline(in, line);
  std::size_t row = 1, read = 0;
  while (std::getline(in, line)) {
    ++row;
    std::stringstream ss(line);
    std::string cell[4];
    for (auto& c : cell) std::getline(ss, c, ',');
    try {
      const std::size_t k = std::stoul(cell[0]);
      const auto v = grid.line_index(std::stoi(cell[2]));
      if (k >= sample_count || !v) throw std::out_of_range("index");
      out[k][*v] = std::stod(cell[3]);
      ++read;
    } catch (const std::exception&) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: malformed row", path.string(), row));
    }
  }
  if (read != sample_count * grid.line_count())
    fail(ErrorCategory::kParse, fmt::format("{}: expected {} rows, found {}", path.string(),
                                            sample_count * grid.line_count(), read));
  return out;
}

Ranking read_ranking(const PowerGrid& grid, const fs::path& path, const std::string& method, const char* stage) {
  if (!fs::exists(path)) fail(ErrorCategory::kMissingArtifact, missing(method + " ranking", path, stage));
  Ranking r = read_ranking_csv(grid, path);
  r.method = method;
  return r;
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

// --- pipeline ----------------------------------------------------------------

Pipeline::Pipeline(ExperimentConfig config, ProgressCallback progress)
    : config_(std::move(config)), progress_(std::move(progress)) {
  const fs::path manifest_path = out_dir() / "manifest.json";
  if (fs::exists(manifest_path)) {
    manifest_ = RunManifest::load(manifest_path);
    if (manifest_.config_hash != config_.hash())
      fail(ErrorCategory::kConfig,
           fmt::format("{} holds a run with config hash {}, this config hashes to {}; use a fresh --out",
                       out_dir().string(), manifest_.config_hash, config_.hash()));
    manifest_.tool_version = kToolVersion;
  }
  manifest_.config_hash = config_.hash();
  manifest_.seed = config_.seed;

  const std::uint64_t s = config_.seed;
  manifest_.seed_streams[stream::kTraining] = derive_seed(s, stream::kTraining);
  manifest_.seed_streams[stream::kModel] = derive_seed(s, stream::kModel);
  for (std::size_t i = 0; i < config_.evaluation_grids.size(); ++i) {
    const std::string& name = config_.evaluation_grids[i].name;
    manifest_.seed_streams[fmt::format("{}/{}", stream::kExposure, name)] = derive_seed(s, stream::kExposure, i);
    manifest_.seed_streams[fmt::format("{}/{}", stream::kHoldout, name)] = derive_seed(s, stream::kHoldout, i);
  }
  std::set<std::uint64_t> seen;
  for (const auto& [tag, seed] : manifest_.seed_streams)
    if (!seen.insert(seed).second) fail(ErrorCategory::kConfig, fmt::format("seed stream '{}' collides", tag));
}

fs::path Pipeline::grid_dir(const std::string& name) const { return out_dir() / "grids" / name; }
fs::path Pipeline::dataset_dir() const { return out_dir() / "dataset"; }
fs::path Pipeline::checkpoint_path() const { return out_dir() / "model" / "checkpoint.gcm"; }
fs::path Pipeline::eval_dir(const std::string& name) const { return out_dir() / "eval" / name; }
fs::path Pipeline::metrics_path() const { return out_dir() / "metrics" / "metrics.csv"; }
fs::path Pipeline::report_dir() const { return out_dir() / "report"; }

void Pipeline::say(const std::string& msg) const {
  if (progress_) progress_(msg);
}

void Pipeline::record(const fs::path& path) {
  manifest_.add_artifact(fs::relative(path, out_dir()).generic_string());
}

void Pipeline::write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) fail(ErrorCategory::kEvaluation, fmt::format("failed writing {}", path.string()));
  record(path);
}

void Pipeline::timed(const std::string& stage, const std::function<void()>& body) {
  fs::create_directories(out_dir());
  const auto t0 = std::chrono::steady_clock::now();
  body();
  manifest_.stage_seconds[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest_.save(out_dir() / "manifest.json");
}

PowerGrid Pipeline::load_stage_grid(const GridSource& g) const {
  const fs::path dir = grid_dir(g.name);
  if (!fs::exists(dir / "lines.csv")) fail(ErrorCategory::kMissingArtifact, missing("grid", dir, "grid-gen"));
  return load_grid(dir, g.name);
}

void Pipeline::grid_gen() {
  timed("grid-gen", [&] {
    std::string summary = "grid,role,buses,lines,total_load\n";
    auto emit = [&](const GridSource& g, const char* role) {
      const PowerGrid grid = g.path ? load_grid(*g.path, g.name) : generate_synthetic_grid(g.spec);
      save_grid(grid, grid_dir(g.name));
      record(grid_dir(g.name) / "buses.csv");
      record(grid_dir(g.name) / "lines.csv");
      double load = 0.0;
      for (const Bus& b : grid.buses()) load += b.load;
      summary += fmt::format("{},{},{},{},{}\n", grid.name(), role, grid.bus_count(), grid.line_count(), load);
      say(fmt::format("grid {} ({}): {} buses, {} lines", grid.name(), role, grid.bus_count(), grid.line_count()));
    };
    for (const auto& g : config_.training_grids) emit(g, "train");
    for (const auto& g : config_.evaluation_grids) emit(g, "eval");
    write_file(out_dir() / "grids" / "summary.csv", summary);
  });
}

void Pipeline::dataset_build() {
  timed("dataset-build", [&] {
    std::vector<PowerGrid> grids;
    for (const auto& g : config_.training_grids) grids.push_back(load_stage_grid(g));
    TrainingDatasetOptions opt;
    opt.pool_per_grid = config_.pool_per_grid;
    opt.cap = config_.cap;
    opt.k_range = config_.k_range;
    opt.seed = manifest_.seed_streams.at(stream::kTraining);
    opt.weight.exponent = config_.depth_exponent;
    opt.max_label = config_.model.classes - 1;
    opt.threads = config_.threads;
    const Dataset ds = build_training_dataset(grids, opt);
    save_dataset(ds, dataset_dir());
    record(dataset_dir() / "samples.jsonl");
    record(dataset_dir() / "manifest.json");

    std::string stats = "grid,samples,mean_depth,mean_scale,max_depth\n";
    for (const PowerGrid& g : grids) {
      std::vector<CascadeSample> mine;
      for (const auto& s : ds.samples)
        if (s.grid_name == g.name()) mine.push_back(s);
      const PoolStatistics st = pool_statistics(mine, g.line_count());
      stats += fmt::format("{},{},{},{},{}\n", g.name(), mine.size(), st.mean_depth, st.mean_scale, st.max_depth);
      say(fmt::format("dataset {}: {} samples, mean G {:.2f}", g.name(), mine.size(), st.mean_depth));
    }
    write_file(dataset_dir() / "statistics.csv", stats);
  });
}

void Pipeline::train() {
  timed("train", [&] {
    if (!fs::exists(dataset_dir() / "samples.jsonl"))
      fail(ErrorCategory::kMissingArtifact, missing("dataset", dataset_dir(), "dataset-build"));
    // Zero-shot contract: only training grids are read here.
    LineGraphIndex graphs;
    for (const auto& g : config_.training_grids) graphs.emplace(g.name, EdgeIndex(build_line_graph(load_stage_grid(g))));
    const Dataset ds = load_dataset(dataset_dir());

    ModelConfig mc = config_.model;
    mc.seed = manifest_.seed_streams.at(stream::kModel);
    GruGatModel model(mc);
    std::string history = "epoch,train_loss,validation_loss,lr_end,optimizer_steps\n";
    const TrainingHistory h = gridcascade::train(model, ds, graphs, [&](const EpochRecord& r) {
      history += fmt::format("{},{},{},{},{}\n", r.epoch, r.train_loss, r.validation_loss, r.lr_end, r.optimizer_steps);
      say(fmt::format("epoch {}: train {:.4f} validation {:.4f}", r.epoch, r.train_loss, r.validation_loss));
    });
    fs::create_directories(checkpoint_path().parent_path());
    save_checkpoint(model, checkpoint_path());
    record(checkpoint_path());
    write_file(out_dir() / "model" / "history.csv", history);
    manifest_.notes["best_epoch"] = std::to_string(h.best_epoch);
    manifest_.notes["early_stopped"] = h.early_stopped ? "true" : "false";
    manifest_.notes["train_samples"] = std::to_string(h.train_count);
    manifest_.notes["validation_samples"] = std::to_string(h.validation_count);
  });
}

void Pipeline::exposure() {
  timed("exposure", [&] {
    if (!fs::exists(checkpoint_path()))
      fail(ErrorCategory::kMissingArtifact, missing("checkpoint", checkpoint_path(), "train"));
    GruGatModel model = load_checkpoint(checkpoint_path(), config_.model);
    ExposureOptions opt;
    opt.mask_self_loops = config_.mask_self_loops;
    opt.threads = config_.threads;
    for (const auto& g : config_.evaluation_grids) {
      const PowerGrid grid = load_stage_grid(g);
      const LineGraph lg = build_line_graph(grid);
      const Dataset pool =
          build_cascade_pool(grid, config_.exposure_samples, config_.k_range,
                             manifest_.seed_streams.at(fmt::format("{}/{}", stream::kExposure, g.name)),
                             DatasetRole::kExposure, config_.threads);
      const auto attention = sample_attention(model, lg, pool.samples, opt);
      Ranking r = aggregate_attention(grid, attention, pool.samples, pool.samples.size());
      const fs::path dir = eval_dir(g.name);
      fs::create_directories(dir);
      write_samples_jsonl(pool.samples, dir / "exposure_samples.jsonl");
      record(dir / "exposure_samples.jsonl");
      write_attention_csv(attention, pool.samples, grid, dir / "attention.csv");
      record(dir / "attention.csv");
      write_ranking_csv(r, dir / "exposure.csv");
      record(dir / "exposure.csv");
      say(fmt::format("exposure {}: {} samples", g.name, pool.samples.size()));
    }
  });
}

void Pipeline::baseline() {
  timed("baseline", [&] {
    for (const auto& g : config_.evaluation_grids) {
      const PowerGrid grid = load_stage_grid(g);
      const fs::path dir = eval_dir(g.name);
      fs::create_directories(dir);
      write_ranking_csv(electric_betweenness(grid), dir / "baseline_eb.csv", true);
      record(dir / "baseline_eb.csv");
      write_ranking_csv(bodf_pagerank(grid), dir / "baseline_pr.csv", true);
      record(dir / "baseline_pr.csv");
      say(fmt::format("baselines {}", g.name));
    }
  });
}

void Pipeline::evaluate() {
  timed("evaluate", [&] {
    if (!fs::exists(checkpoint_path()))
      fail(ErrorCategory::kMissingArtifact, missing("checkpoint", checkpoint_path(), "train"));
    GruGatModel model = load_checkpoint(checkpoint_path(), config_.model);
    std::vector<MetricRow> all;
    for (const auto& g : config_.evaluation_grids) {
      const PowerGrid grid = load_stage_grid(g);
      const fs::path dir = eval_dir(g.name);
      const fs::path samples_path = dir / "exposure_samples.jsonl";
      if (!fs::exists(samples_path))
        fail(ErrorCategory::kMissingArtifact, missing("exposure samples", samples_path, "exposure"));
      const auto expo_samples = read_samples_jsonl(samples_path);
      const auto attention = read_attention_csv(dir / "attention.csv", grid, expo_samples.size());
      const Ranking ex = read_ranking(grid, dir / "exposure.csv", "exposure", "exposure");
      const Ranking eb = read_ranking(grid, dir / "baseline_eb.csv", "EB", "baseline");
      const Ranking pr = read_ranking(grid, dir / "baseline_pr.csv", "PR", "baseline");

      const Dataset held =
          build_holdout_pool(grid, config_.holdout_size, config_.k_range,
                             manifest_.seed_streams.at(fmt::format("{}/{}", stream::kHoldout, g.name)),
                             config_.threads);
      write_samples_jsonl(held.samples, dir / "holdout_samples.jsonl");
      record(dir / "holdout_samples.jsonl");
      const VulnerabilityTable vul = ground_truth_vulnerability(grid, held.samples);
      write_vulnerability_csv(vul, dir / "vulnerability.csv");
      record(dir / "vulnerability.csv");

      std::vector<MetricRow> rows;
      auto add = [&](const std::string& method, const std::string& metric, const std::string& param, double v) {
        rows.push_back({g.name, method, metric, param, v});
      };
      add("grid", "line_count", "", static_cast<double>(grid.line_count()));
      add("grid", "avg_depth", "", vul.avg_depth);
      add("grid", "avg_scale", "", vul.avg_scale);
      add("grid", "depth_cutoff", "", vul.cutoff);
      add("grid", "holdout_samples", "", static_cast<double>(vul.pool_size));

      // Reconstruction on the held-out pool, zero fine-tuning.
      const EdgeIndex edges(build_line_graph(grid));
      std::vector<int> truth, predicted;
      std::size_t skipped = 0;
      for (const auto& s : held.samples) {
        if (s.max_iteration >= model.config().classes) {
          ++skipped;
          continue;
        }
        const auto p = model.predict(s, edges);
        truth.insert(truth.end(), s.labels.begin(), s.labels.end());
        predicted.insert(predicted.end(), p.begin(), p.end());
      }
      add("model", "macro_f1", "", macro_f1(truth, predicted));
      add("model", "f1_skipped_samples", "", static_cast<double>(skipped));

      for (const Ranking* r : {&ex, &eb, &pr}) {
        for (VulBin bin : {VulBin::kTotal, VulBin::kShallow, VulBin::kDeep}) {
          for (double tau : config_.tau_percent)
            add(r->method, "top_tau_" + bin_name(bin), num(tau), mean_top_tau(*r, vul, tau, bin));
          bool has_failures = false;
          for (double v : vul.bin(bin)) has_failures |= v > 0.0;
          if (!has_failures) continue;
          const HighExposureSet set = high_exposure_set(vul, bin);
          if (set.members.empty()) continue;
          add(r->method, "mpr_" + bin_name(bin), "", mean_percentile_rank(*r, set));
          if (bin == VulBin::kTotal) {
            for (double tau : config_.tau_percent) {
              const PrecisionRecall pr_at = top_tau_precision_recall(*r, set, tau);
              add(r->method, "precision", num(tau), pr_at.precision);
              add(r->method, "recall", num(tau), pr_at.recall);
            }
          }
        }
      }
      if (!config_.ns_list.empty()) {
        const auto sweep = sample_efficiency_sweep(grid, attention, expo_samples, vul, config_.ns_list);
        for (const auto& p : sweep) {
          add("exposure", "efficiency_top10", std::to_string(p.sample_count), p.top10);
          add("exposure", "efficiency_kendall", std::to_string(p.sample_count), p.kendall_vs_max);
        }
      }
      write_metrics_csv(rows, dir / "metrics.csv");
      record(dir / "metrics.csv");
      all.insert(all.end(), rows.begin(), rows.end());
      say(fmt::format("evaluated {}", g.name));
    }
    fs::create_directories(metrics_path().parent_path());
    write_metrics_csv(all, metrics_path());
    record(metrics_path());
  });
}

void Pipeline::report() {
  timed("report", [&] {
    if (!fs::exists(metrics_path()))
      fail(ErrorCategory::kMissingArtifact, missing("metrics", metrics_path(), "evaluate"));
    const auto rows = read_metrics_csv(metrics_path());
    auto value = [&](const std::string& grid, const std::string& method, const std::string& metric,
                     const std::string& param) -> std::optional<double> {
      for (const auto& r : rows)
        if (r.grid == grid && r.method == method && r.metric == metric && r.parameter == param) return r.value;
      return std::nullopt;
    };
    const std::vector<std::string> methods{"exposure", "EB", "PR"};
    std::vector<std::string> grids;
    for (const auto& g : config_.evaluation_grids) grids.push_back(g.name);

    std::string md = "# Evaluation summary\n\n";
    md += "| grid | lines | avg depth | macro-F1 | method | top-10% | MPR | deep top-10% | shallow top-10% |\n";
    md += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& grid : grids) {
      auto fmt_opt = [](std::optional<double> v) { return v ? fmt::format("{:.4g}", *v) : std::string("n/a"); };
      for (const auto& m : methods) {
        md += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", grid,
                          fmt_opt(value(grid, "grid", "line_count", "")), fmt_opt(value(grid, "grid", "avg_depth", "")),
                          fmt_opt(value(grid, "model", "macro_f1", "")), m,
                          fmt_opt(value(grid, m, "top_tau_total", "10")), fmt_opt(value(grid, m, "mpr_total", "")),
                          fmt_opt(value(grid, m, "top_tau_deep", "10")),
                          fmt_opt(value(grid, m, "top_tau_shallow", "10")));
      }

      std::vector<plot::Series> curves;
      for (const auto& m : methods) {
        plot::Series s{m, {}, {}};
        for (double tau : config_.tau_percent)
          if (auto v = value(grid, m, "top_tau_total", num(tau))) {
            s.x.push_back(tau);
            s.y.push_back(*v);
          }
        curves.push_back(std::move(s));
      }
      write_file(report_dir() / fmt::format("{}_top_tau.svg", grid),
                 plot::line_chart(fmt::format("Mean top-tau% vulnerability: {}", grid), "tau (%)",
                                  "mean vulnerability", curves));

      plot::Series top10{"top-10% vulnerability", {}, {}}, kendall{"Kendall tau vs max N_s", {}, {}};
      for (std::size_t n : config_.ns_list) {
        if (auto v = value(grid, "exposure", "efficiency_top10", std::to_string(n))) {
          top10.x.push_back(static_cast<double>(n));
          top10.y.push_back(*v);
        }
        if (auto v = value(grid, "exposure", "efficiency_kendall", std::to_string(n))) {
          kendall.x.push_back(static_cast<double>(n));
          kendall.y.push_back(*v);
        }
      }
      const std::vector<plot::Series> eff{top10, kendall};
      write_file(report_dir() / fmt::format("{}_efficiency.svg", grid),
                 plot::line_chart(fmt::format("Sample efficiency: {}", grid), "exposure samples N_s", "value", eff));
    }
    write_file(report_dir() / "summary.md", md);

    std::vector<plot::BarGroup> mpr, depth;
    for (const auto& grid : grids) {
      plot::BarGroup g{grid, {}};
      for (const auto& m : methods) g.values.push_back(value(grid, m, "mpr_total", "").value_or(0.0));
      mpr.push_back(std::move(g));
      for (const char* bin : {"shallow", "deep"}) {
        plot::BarGroup d{fmt::format("{} {}", grid, bin), {}};
        for (const auto& m : methods)
          d.values.push_back(value(grid, m, fmt::format("top_tau_{}", bin), "10").value_or(0.0));
        depth.push_back(std::move(d));
      }
    }
    write_file(report_dir() / "mpr.svg",
               plot::bar_chart("Mean percentile rank of the high-exposure set (lower is better)", "MPR", methods, mpr));
    write_file(report_dir() / "depth.svg",
               plot::bar_chart("Depth-stratified mean top-10% vulnerability", "mean vulnerability", methods, depth));
  });
}

void Pipeline::run_all() {
  grid_gen();
  dataset_build();
  train();
  exposure();
  baseline();
  evaluate();
  report();
}

}  // namespace gridcascade
