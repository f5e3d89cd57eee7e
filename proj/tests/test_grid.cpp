#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

using namespace testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gc_grid_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("grid validation") {
  const std::vector<Bus> buses{{1, 1.0, 0.0}, {2, 0.0, 1.0}};
  CHECK_NOTHROW(PowerGrid("ok", buses, {line(1, 1, 2)}));
  CHECK(category_of([&] { PowerGrid("g", buses, {}); }) == ErrorCategory::kInvalidGrid);
  CHECK(message_of([&] { PowerGrid("g", buses, {line(1, 1, 9)}); }) == "unknown bus 9");
  CHECK(category_of([&] { PowerGrid("g", buses, {line(1, 1, 1)}); }) == ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] { PowerGrid("g", buses, {line(1, 1, 2), line(2, 2, 1)}); }) ==
        ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] { PowerGrid("g", buses, {line(1, 1, 2, 0.0)}); }) == ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] { PowerGrid("g", buses, {line(1, 1, 2, 1.0, -1.0)}); }) ==
        ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] { PowerGrid("g", {{1, 1.0, 0.0}, {2, 0.0, 0.5}}, {line(1, 1, 2)}); }) ==
        ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] {
          PowerGrid("g", {{1, 1.0, 0.0}, {2, 0.0, 1.0}, {3, 0.0, 0.0}, {4, 0.0, 0.0}},
                    {line(1, 1, 2), line(2, 3, 4)});
        }) == ErrorCategory::kInvalidGrid);
  CHECK(category_of([&] { PowerGrid("g", {{1, 1.0, 0.0}, {1, 0.0, 1.0}}, {line(1, 1, 2)}); }) ==
        ErrorCategory::kInvalidGrid);
}

TEST_CASE("line graph of a triangle") {
  const LineGraph lg = build_line_graph(triangle());
  CHECK(lg.node_count == 3);
  CHECK(lg.edges.size() == 9);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& e : lg.edges) pairs.insert({e.source, e.target});
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t v = 0; v < 3; ++v) CHECK(pairs.contains({u, v}));
  }
}

TEST_CASE("line graph of a single line and of a star") {
  const LineGraph single = build_line_graph(chain(2));
  REQUIRE(single.edges.size() == 1);
  CHECK(single.edges[0].is_self_loop());

  const PowerGrid star("star", {{1, 3.0, 0.0}, {2, 0.0, 1.0}, {3, 0.0, 1.0}, {4, 0.0, 1.0}},
                       {line(1, 1, 2), line(2, 1, 3), line(3, 1, 4)});
  const LineGraph lg = build_line_graph(star);
  CHECK(lg.edges.size() == 9);  // K3 both directions plus three self-loops
  for (const auto& e : lg.edges) {
    if (!e.is_self_loop()) CHECK(e.shared_bus == 1);
  }
}

TEST_CASE("line graph properties on random grids") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const PowerGrid g = random_grid(seed, 3, 40);
    const LineGraph lg = build_line_graph(g);
    std::vector<int> bus_degree(g.bus_count(), 0);
    for (std::size_t l = 0; l < g.line_count(); ++l) {
      ++bus_degree[g.from_index(l)];
      ++bus_degree[g.to_index(l)];
    }
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<int> out_degree(g.line_count(), 0);
    std::size_t self_loops = 0;
    for (std::size_t i = 0; i < lg.edges.size(); ++i) {
      const auto& e = lg.edges[i];
      pairs.insert({e.source, e.target});
      if (e.is_self_loop()) {
        ++self_loops;
      } else {
        ++out_degree[e.source];
      }
      if (i > 0) {
        const auto& p = lg.edges[i - 1];
        CHECK(std::pair(p.target, p.source) < std::pair(e.target, e.source));
      }
    }
    CHECK(self_loops == g.line_count());
    for (const auto& [u, v] : pairs) CHECK(pairs.contains({v, u}));
    for (std::size_t l = 0; l < g.line_count(); ++l) {
      CHECK(out_degree[l] == bus_degree[g.from_index(l)] - 1 + bus_degree[g.to_index(l)] - 1);
    }
  }
}

TEST_CASE("cascade depth") {
  const LineGraph tri = build_line_graph(triangle());
  const std::vector<std::size_t> first{0};
  const CascadeDepths d = cascade_depth(tri, first);
  CHECK(d.depth(0) == 0);
  CHECK(d.depth(1) == 1);
  CHECK(d.depth(2) == 1);

  const LineGraph ch = build_line_graph(chain(6));
  const std::vector<std::size_t> ends{0, 4};
  const CascadeDepths c = cascade_depth(ch, ends);
  CHECK(std::vector<int>(c.raw().begin(), c.raw().end()) == std::vector<int>{0, 1, 2, 1, 0});

  CHECK(category_of([&] { cascade_depth(tri, std::vector<std::size_t>{}); }) == ErrorCategory::kInvalidSample);

  // Two components by hand: nodes {0,1} and {2}.
  LineGraph split;
  split.node_count = 3;
  split.edges = {{0, 0, -1}, {1, 0, 1}, {0, 1, 1}, {1, 1, -1}, {2, 2, -1}};
  const CascadeDepths s = cascade_depth(split, first);
  CHECK(s.depth(1) == 1);
  CHECK_FALSE(s.reachable(2));
  CHECK_FALSE(s.within(2, 1000));
}

TEST_CASE("cascade depth satisfies the BFS recurrence") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PowerGrid g = random_grid(seed, 5, 30);
    const LineGraph lg = build_line_graph(g);
    Rng rng(seed);
    const std::vector<std::size_t> init{uniform_index(rng, g.line_count())};
    const CascadeDepths d = cascade_depth(lg, init);
    std::vector<int> best(lg.node_count, std::numeric_limits<int>::max());
    for (const auto& e : lg.edges) {
      if (!e.is_self_loop()) best[e.target] = std::min(best[e.target], d.depth(e.source));
    }
    for (std::size_t u = 0; u < lg.node_count; ++u) {
      REQUIRE(d.reachable(u));
      if (u == init[0]) {
        CHECK(d.depth(u) == 0);
      } else {
        CHECK(d.depth(u) == best[u] + 1);
      }
    }
  }
}

TEST_CASE("synthetic grids are deterministic, balanced and within limits") {
  SyntheticGridSpec spec{3, GridFamily::kRingMesh, 1.2, 7, ""};
  CHECK(generate_synthetic_grid(spec) == generate_synthetic_grid(spec));
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (GridFamily f : {GridFamily::kRingMesh, GridFamily::kHubSpoke}) {
      const PowerGrid g = generate_synthetic_grid({static_cast<int>(3 + seed * 2), f, 1.2, seed, ""});
      double balance = 0.0;
      for (const auto& b : g.buses()) balance += b.generation - b.load;
      CHECK(std::abs(balance) < 1e-9);
      const FlowSolution sol = solve_dc(g, all_active(g));
      for (std::size_t l = 0; l < g.line_count(); ++l) CHECK(std::abs(sol.flow[l]) < g.lines()[l].capacity);
    }
  }
  CHECK(category_of([] { generate_synthetic_grid({2, GridFamily::kRingMesh, 1.2, 0, ""}); }) ==
        ErrorCategory::kConfig);
  CHECK(category_of([] { generate_synthetic_grid({10, GridFamily::kRingMesh, 1.0, 0, ""}); }) ==
        ErrorCategory::kConfig);
}

TEST_CASE("grid files round-trip") {
  const PowerGrid g = generate_synthetic_grid({25, GridFamily::kHubSpoke, 1.4, 3, "hub25"});
  const auto dir = scratch("roundtrip");
  save_grid(g, dir);
  CHECK(load_grid(dir) == g);
}

TEST_CASE("grid file errors name the row") {
  const auto dir = scratch("errors");
  write(dir / "buses.csv", "\xEF\xBB\xBFid,generation,load\n# a comment\n1,1.0,0\n2,0,1.0\n");
  write(dir / "lines.csv", "id,from_bus,to_bus,susceptance,capacity\n1,1,2,1,5\n2,1,99,1,5\n");
  const std::string msg = message_of([&] { load_grid(dir); });
  CHECK(msg.find("unknown bus 99") != std::string::npos);
  CHECK(msg.find("lines.csv:3") != std::string::npos);

  write(dir / "lines.csv", "id,from_bus,to_bus,susceptance,capacity\n");
  CHECK(message_of([&] { load_grid(dir); }) == "grid has no lines");

  write(dir / "lines.csv", "id,from_bus,to_bus,susceptance,capacity\n1,1,2,abc,5\n");
  CHECK(category_of([&] { load_grid(dir); }) == ErrorCategory::kParse);

  write(dir / "lines.csv", "id,from_bus,to_bus,susceptance,capacity\n1,1,2,1,5\n1,2,1,1,5\n");
  CHECK(message_of([&] { load_grid(dir); }).find("duplicate line id 1") != std::string::npos);

  write(dir / "lines.csv", "from,to\n1,2\n");
  CHECK(category_of([&] { load_grid(dir); }) == ErrorCategory::kParse);
}
