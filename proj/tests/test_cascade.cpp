#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "gridcascade/cascade.hpp"
#include "helpers.hpp"

using namespace testing;

TEST_CASE("triangle overload cascade") {
  // Flows 2/3 and 1/3 with capacities 0.7; losing the direct line pushes the
  // whole transfer of 1.0 through the two remaining lines.
  const PowerGrid g("tri", {{1, 1.0, 0.0}, {2, 0.0, 1.0}, {3, 0.0, 0.0}},
                    {line(1, 1, 2, 1.0, 0.7), line(2, 2, 3, 1.0, 0.7), line(3, 3, 1, 1.0, 0.7)});
  const std::vector<std::size_t> init{0};
  std::vector<std::vector<bool>> history;
  const CascadeSample s = simulate_cascade(g, init, &history);
  CHECK(s.labels == std::vector<int>{1, 2, 2});
  CHECK(s.max_iteration == 2);
  CHECK(history.size() == 2);
  CHECK_NOTHROW(validate_sample(s));
}

TEST_CASE("nothing propagates with ample capacity or when everything failed") {
  const PowerGrid base = generate_synthetic_grid({20, GridFamily::kRingMesh, 1.2, 1, ""});
  const PowerGrid g = base.with_capacities(std::vector<double>(base.line_count(), 1e6));
  const std::vector<std::size_t> init{0, 3};
  CHECK(simulate_cascade(g, init).max_iteration == 1);

  std::vector<std::size_t> all(g.line_count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const CascadeSample s = simulate_cascade(g, all);
  CHECK(s.max_iteration == 1);
  CHECK(s.propagated_count() == 0);
}

TEST_CASE("ties at capacity survive") {
  const PowerGrid g("tri", {{1, 1.0, 0.0}, {2, 0.0, 1.0}, {3, 0.0, 0.0}},
                    {line(1, 1, 2, 1.0, 1.0), line(2, 2, 3, 1.0, 1.0), line(3, 3, 1, 1.0, 1.0)});
  const std::vector<std::size_t> init{0};
  CHECK(simulate_cascade(g, init).max_iteration == 1);
}

TEST_CASE("sample validation") {
  CascadeSample s{"g", {0, 1, 3}, 3, 0};
  CHECK(category_of([&] { validate_sample(s); }) == ErrorCategory::kInvalidSample);
  s = {"g", {0, 0, 2}, 2, 0};
  CHECK(category_of([&] { validate_sample(s); }) == ErrorCategory::kInvalidSample);
  s = {"g", {0, 1, 2}, 1, 0};
  CHECK(category_of([&] { validate_sample(s); }) == ErrorCategory::kInvalidSample);
  s = {"g", {1, 1, 2, 3, 0}, 3, 0};
  CHECK_NOTHROW(validate_sample(s));
  CHECK(s.propagated_count() == 2);
}

TEST_CASE("simulator invariants over random cascades") {
  int propagating = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const PowerGrid g = random_grid(seed, 6, 30, 1.1 + 0.01 * static_cast<double>(seed % 20));
    Rng rng(derive_seed(seed, "test"));
    const auto init = draw_initial_failures(g.line_count(), {1, 3}, rng);
    std::vector<std::vector<bool>> history;
    const CascadeSample s = simulate_cascade(g, init, &history);
    CHECK_NOTHROW(validate_sample(s));
    CHECK(s.max_iteration <= static_cast<int>(g.line_count()));
    CHECK(history.size() == static_cast<std::size_t>(s.max_iteration));
    for (std::size_t t = 1; t < history.size(); ++t) {
      for (std::size_t l = 0; l < g.line_count(); ++l) CHECK((!history[t - 1][l] || history[t][l]));
    }
    for (std::size_t l = 0; l < g.line_count(); ++l) {
      CHECK(history.back()[l] == (s.labels[l] > 0));
    }
    CHECK(simulate_cascade(g, init) == s);
    propagating += s.max_iteration >= 2;
  }
  CHECK(propagating > 0);
}

TEST_CASE("initial failure draws") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto d = draw_initial_failures(10, {1, 3}, rng);
    CHECK(d.size() >= 1);
    CHECK(d.size() <= 3);
    CHECK(std::adjacent_find(d.begin(), d.end()) == d.end());
  }
  CHECK(category_of([&] { draw_initial_failures(10, {0, 3}, rng); }) == ErrorCategory::kConfig);
}

TEST_CASE("depth-weighted resampling follows G") {
  const std::vector<CascadeSample> pool{{"g", {1, 2}, 2, 0}, {"g", {1, 2, 3, 4, 5, 6}, 6, 1}};
  Rng rng(11);
  const std::size_t n = 10000;
  const auto picks = weighted_resample(pool, n, {}, rng);
  const double deep = static_cast<double>(std::count(picks.begin(), picks.end(), 1));
  // Binomial with p = 6 / 8.
  const double p = 0.75;
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(deep - n * p) < 3 * sigma);

  const std::vector<CascadeSample> flat{{"g", {1, 2}, 2, 0}, {"g", {2, 1}, 2, 1}};
  const auto even = weighted_resample(flat, n, {}, rng);
  const double ones = static_cast<double>(std::count(even.begin(), even.end(), 1));
  CHECK(std::abs(ones - n * 0.5) < 3 * std::sqrt(n * 0.25));
}

TEST_CASE("training dataset build") {
  const std::vector<PowerGrid> grids{generate_synthetic_grid({20, GridFamily::kRingMesh, 1.15, 1, "a"}),
                                     generate_synthetic_grid({24, GridFamily::kRingMesh, 1.15, 2, "b"})};
  TrainingDatasetOptions opt;
  opt.pool_per_grid = 150;
  opt.cap = 60;
  opt.seed = 5;
  const Dataset ds = build_training_dataset(grids, opt);
  CHECK(ds.samples.size() == 120);
  for (const auto& s : ds.samples) {
    CHECK(s.max_iteration >= 2);
    CHECK_NOTHROW(validate_sample(s));
  }
  CHECK(ds.samples.front().grid_name == "a");
  CHECK(ds.samples.back().grid_name == "b");
  CHECK(ds.provenance.grids == std::vector<std::string>{"a", "b"});

  opt.threads = 3;
  const Dataset threaded = build_training_dataset(grids, opt);
  CHECK(threaded.samples == ds.samples);

  const std::vector<double> huge(grids[0].line_count(), 1e6);
  const std::vector<PowerGrid> stiff{grids[0].with_capacities(huge)};
  const std::string msg = message_of([&] { build_training_dataset(stiff, opt); });
  CHECK(msg.find("no propagating cascades; lower capacity_factor") != std::string::npos);
}

TEST_CASE("held-out pools are deterministic and disjoint from exposure streams") {
  const PowerGrid g = generate_synthetic_grid({30, GridFamily::kHubSpoke, 1.15, 9, "h"});
  const Dataset a = build_holdout_pool(g, 40, {1, 3}, 77);
  const Dataset b = build_holdout_pool(g, 40, {1, 3}, 77, 2);
  CHECK(a.samples == b.samples);
  CHECK(a.samples.size() == 40);
  const Dataset e = build_cascade_pool(g, 40, {1, 3}, 77, DatasetRole::kExposure);
  std::size_t shared_seeds = 0;
  for (const auto& x : a.samples) {
    for (const auto& y : e.samples) shared_seeds += x.seed == y.seed;
  }
  CHECK(shared_seeds == 0);
  const PoolStatistics st = pool_statistics(a.samples, g.line_count());
  CHECK(st.mean_depth >= 2.0);
  CHECK(st.mean_scale > 0.0);
}

TEST_CASE("datasets round-trip through disk") {
  const PowerGrid g = generate_synthetic_grid({20, GridFamily::kRingMesh, 1.15, 4, "rt"});
  const Dataset ds = build_holdout_pool(g, 10, {1, 2}, 3);
  const auto dir = std::filesystem::temp_directory_path() / "gc_dataset_rt";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.samples == ds.samples);
  CHECK(back.role == DatasetRole::kHeldout);
  CHECK(back.provenance.seed == ds.provenance.seed);
}
