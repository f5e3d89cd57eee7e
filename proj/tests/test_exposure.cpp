#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gridcascade/exposure.hpp"
#include "helpers.hpp"

using namespace testing;
using ad::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden_dim = 8;
  c.heads = 2;
  c.classes = 12;
  c.seed = 4;
  return c;
}

std::vector<std::size_t> admitted_sources(const LineGraph& lg, const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < mask.size(); ++e) {
    if (mask[e]) out.push_back(lg.edges[e].source);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

TEST_CASE("mask on the triangle") {
  const LineGraph lg = build_line_graph(triangle());
  const std::vector<std::size_t> init{0};
  const CascadeDepths d = cascade_depth(lg, init);
  const auto t0 = mask_edges(lg, d, 0);
  CHECK(admitted_sources(lg, t0) == std::vector<std::size_t>{0});
  CHECK(std::count(t0.begin(), t0.end(), true) == 3);  // 0->0, 0->1, 0->2
  const auto t1 = mask_edges(lg, d, 1);
  CHECK(std::count(t1.begin(), t1.end(), true) == 9);

  const CascadeDepths none(std::vector<int>(3, CascadeDepths::kUnreachable));
  const auto empty = mask_edges(lg, none, 50);
  CHECK(std::none_of(empty.begin(), empty.end(), [](bool b) { return b; }));

  const auto loose = mask_edges(lg, d, 0, false);
  CHECK(std::count(loose.begin(), loose.end(), true) == 5);  // plus the two other self-loops
}

TEST_CASE("mask nesting") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PowerGrid g = random_grid(seed, 6, 30);
    const LineGraph lg = build_line_graph(g);
    Rng rng(seed);
    const auto init = draw_initial_failures(g.line_count(), {1, 3}, rng);
    const CascadeDepths d = cascade_depth(lg, init);
    for (int t = 0; t < 12; ++t) {
      const auto a = mask_edges(lg, d, t);
      const auto b = mask_edges(lg, d, t + 1);
      for (std::size_t e = 0; e < a.size(); ++e) CHECK((!a[e] || b[e]));
    }
  }
}

TEST_CASE("masked incoming attention on a hand-built trace") {
  // Triangle line graph, initial failure on node 0, G = 3 so steps t = 0, 1.
  // Edge order is (target, source): (0<-0) (0<-1) (0<-2) (1<-0) (1<-1) (1<-2) (2<-0) (2<-1) (2<-2).
  const LineGraph lg = build_line_graph(triangle());
  const CascadeSample s{"triangle", {1, 2, 3}, 3, 0};
  const std::vector<std::size_t> init{0};
  const CascadeDepths d = cascade_depth(lg, init);
  ForwardTrace trace;
  trace.heads = 2;
  trace.alpha.push_back(Tensor({9, 2}, std::vector<double>{0.5, 0.25, 0.25, 0.5, 0.25, 0.25,  //
                                                            0.125, 0.375, 0.5, 0.5, 0.375, 0.125,  //
                                                            0.75, 0.5, 0.125, 0.25, 0.125, 0.25}));
  trace.alpha.push_back(Tensor({9, 2}, std::vector<double>{0.25, 0.25, 0.5, 0.25, 0.25, 0.5,  //
                                                            1.0, 0.5, 0.0, 0.25, 0.0, 0.25,  //
                                                            0.5, 0.5, 0.25, 0.25, 0.25, 0.25}));
  // t = 0 admits only edges leaving node 0: rows 0, 3, 6 -> means 0.375, 0.25, 0.625.
  // t = 1 admits everything, and each target's head means sum to one.
  const auto a = masked_incoming_attention(trace, lg, d, s);
  CHECK(a == std::vector<double>{1.375, 1.25, 1.625});

  // Without the self-loop mask the self-loops of nodes 1 and 2 also count at
  // t = 0 (means 0.5 and 0.1875).
  const auto loose = masked_incoming_attention(trace, lg, d, s, false);
  CHECK(loose == std::vector<double>{1.375, 1.75, 1.8125});

  // G = 2 sums a single step.
  ForwardTrace one = trace;
  one.alpha.pop_back();
  const CascadeSample s2{"triangle", {1, 2, 0}, 2, 0};
  CHECK(masked_incoming_attention(one, lg, d, s2) == std::vector<double>{0.375, 0.25, 0.625});
  CHECK(category_of([&] { masked_incoming_attention(one, lg, d, s); }) == ErrorCategory::kShape);
}

TEST_CASE("cascade weight") {
  CHECK(cascade_weight({"g", {1, 1, 2, 3, 0}, 3, 0}) == 2);
  CHECK(cascade_weight({"g", {1, 0, 1}, 1, 0}) == 0);
}

TEST_CASE("aggregation rules") {
  const PowerGrid g = generate_synthetic_grid({12, GridFamily::kRingMesh, 1.1, 3, "agg"});
  const Dataset pool = build_cascade_pool(g, 12, {1, 3}, 5, DatasetRole::kExposure);
  GruGatModel model(small_config());
  const LineGraph lg = build_line_graph(g);
  const auto att = sample_attention(model, lg, pool.samples);

  const Ranking one = aggregate_attention(g, att, pool.samples, 1);
  for (std::size_t v = 0; v < g.line_count(); ++v) CHECK(std::abs(one.score[v] - att[0][v]) < 1e-15);

  const Ranking two = aggregate_attention(g, att, pool.samples, 2);
  const double w0 = cascade_weight(pool.samples[0]);
  const double w1 = cascade_weight(pool.samples[1]);
  for (std::size_t v = 0; v < g.line_count(); ++v) {
    CHECK(std::abs(two.score[v] - (w0 * att[0][v] + w1 * att[1][v]) / (w0 + w1)) < 1e-15);
  }

  // Reversed order and uniformly scaled weights (every sample twice).
  std::vector<CascadeSample> reversed(pool.samples.rbegin(), pool.samples.rend());
  std::vector<std::vector<double>> reversed_att(att.rbegin(), att.rend());
  std::vector<CascadeSample> doubled;
  std::vector<std::vector<double>> doubled_att;
  for (std::size_t k = 0; k < pool.samples.size(); ++k) {
    for (int rep = 0; rep < 2; ++rep) {
      doubled.push_back(pool.samples[k]);
      doubled_att.push_back(att[k]);
    }
  }
  const Ranking all = aggregate_attention(g, att, pool.samples, pool.samples.size());
  const Ranking rev = aggregate_attention(g, reversed_att, reversed, reversed.size());
  const Ranking dbl = aggregate_attention(g, doubled_att, doubled, doubled.size());
  for (std::size_t v = 0; v < g.line_count(); ++v) {
    CHECK(std::abs(all.score[v] - rev.score[v]) < 1e-14);
    CHECK(std::abs(all.score[v] - dbl.score[v]) < 1e-14);
  }

  // Upper bound from admitted in-degree.
  for (std::size_t k = 0; k < pool.samples.size(); ++k) {
    const CascadeDepths d = cascade_depth(lg, pool.samples[k].initial_failures());
    std::vector<double> bound(lg.node_count, 0.0);
    for (int t = 0; t + 1 < pool.samples[k].max_iteration; ++t) {
      const auto m = mask_edges(lg, d, t);
      for (std::size_t e = 0; e < m.size(); ++e) bound[lg.edges[e].target] += m[e];
    }
    for (std::size_t v = 0; v < lg.node_count; ++v) {
      CHECK(att[k][v] >= 0.0);
      CHECK(att[k][v] <= bound[v] + 1e-12);
    }
  }

  ExposureOptions threaded;
  threaded.threads = 3;
  CHECK(sample_attention(model, lg, pool.samples, threaded) == att);
  CHECK(aggregate_exposure(model, g, pool.samples).score == all.score);

  const std::vector<CascadeSample> flat{{"agg", std::vector<int>(g.line_count(), 0), 1, 0}};
  const std::vector<std::vector<double>> flat_att{std::vector<double>(g.line_count(), 1.0)};
  CHECK(message_of([&] { aggregate_attention(g, flat_att, flat, 1); }) == "no propagating samples");
}

TEST_CASE("rankings are permutations with id tie-break") {
  const PowerGrid g("c", {{1, 1.0, 0.0}, {2, 0.0, 0.0}, {3, 0.0, 0.0}, {4, 0.0, 1.0}},
                    {line(7, 1, 2), line(3, 2, 3), line(5, 3, 4)});
  const Ranking r = make_ranking(g, {0.5, 0.5, 0.9}, "x");
  CHECK(r.rank == std::vector<int>{3, 2, 1});
  CHECK(r.order == std::vector<std::size_t>{2, 1, 0});
}
