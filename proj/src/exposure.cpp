#include "gridcascade/exposure.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"

namespace gridcascade {

std::vector<bool> mask_edges(const LineGraph& lg, const CascadeDepths& depths, int t, bool mask_self_loops) {
  std::vector<bool> admitted(lg.edges.size());
  for (std::size_t e = 0; e < lg.edges.size(); ++e) {
    const auto& edge = lg.edges[e];
    admitted[e] = (!mask_self_loops && edge.is_self_loop()) || depths.within(edge.source, t);
  }
  return admitted;
}

std::vector<double> masked_incoming_attention(const ForwardTrace& trace, const LineGraph& lg,
                                              const CascadeDepths& depths, const CascadeSample& sample,
                                              bool mask_self_loops) {
  const auto steps = static_cast<std::size_t>(std::max(sample.max_iteration - 1, 0));
  if (trace.step_count() != steps || depths.size() != lg.node_count ||
      sample.labels.size() != lg.node_count) {
    fail(ErrorCategory::kShape,
         fmt::format("trace has {} steps for a sample with G = {} on {} lines", trace.step_count(),
                     sample.max_iteration, lg.node_count));
  }
  std::vector<double> a(lg.node_count, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    if (trace.alpha[t].rows() != lg.edges.size()) {
      fail(ErrorCategory::kShape, "trace attention does not match the line graph");
    }
    const auto admitted = mask_edges(lg, depths, static_cast<int>(t), mask_self_loops);
    for (std::size_t e = 0; e < lg.edges.size(); ++e) {
      if (admitted[e]) a[lg.edges[e].target] += trace.mean_alpha(t, e);
    }
  }
  return a;
}

int cascade_weight(const CascadeSample& sample) {
  return static_cast<int>(std::count_if(sample.labels.begin(), sample.labels.end(), [](int g) { return g > 1; }));
}

std::vector<std::vector<double>> sample_attention(GruGatModel& model, const LineGraph& lg,
                                                  std::span<const CascadeSample> samples,
                                                  const ExposureOptions& opt) {
  const EdgeIndex edges(lg);
  std::vector<std::vector<double>> out(samples.size());
  auto work = [&](std::size_t k) {
    ad::Tape tape;
    const ForwardResult r = model.forward(tape, samples[k], edges, false);
    const CascadeDepths depths = cascade_depth(lg, samples[k].initial_failures());
    out[k] = masked_incoming_attention(r.trace, lg, depths, samples[k], opt.mask_self_loops);
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(samples.size())));
  if (threads <= 1) {
    for (std::size_t k = 0; k < samples.size(); ++k) work(k);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < samples.size(); k += threads) work(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Ranking aggregate_attention(const PowerGrid& grid, std::span<const std::vector<double>> attention,
                            std::span<const CascadeSample> samples, std::size_t count) {
  if (count > samples.size() || attention.size() != samples.size()) {
    fail(ErrorCategory::kEvaluation,
         fmt::format("requested {} samples but only {} are available", count, samples.size()));
  }
  std::vector<double> score(grid.line_count(), 0.0);
  double total_weight = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double w = cascade_weight(samples[k]);
    if (w == 0.0) continue;
    total_weight += w;
    for (std::size_t v = 0; v < score.size(); ++v) score[v] += w * attention[k][v];
  }
  if (total_weight == 0.0) fail(ErrorCategory::kEvaluation, "no propagating samples");
  for (double& s : score) s /= total_weight;
  Ranking r = make_ranking(grid, std::move(score), "exposure");
  r.sample_count = count;
  return r;
}

Ranking aggregate_exposure(GruGatModel& model, const PowerGrid& grid, std::span<const CascadeSample> samples,
                           const ExposureOptions& opt) {
  for (const auto& s : samples) {
    if (s.grid_name != grid.name()) {
      fail(ErrorCategory::kEvaluation,
           fmt::format("sample from grid '{}' passed for grid '{}'", s.grid_name, grid.name()));
    }
  }
  const LineGraph lg = build_line_graph(grid);
  const auto attention = sample_attention(model, lg, samples, opt);
  return aggregate_attention(grid, attention, samples, samples.size());
}

}  // namespace gridcascade
