#pragma once

#include <span>
#include <vector>

#include "gridcascade/cascade.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/model.hpp"
#include "gridcascade/ranking.hpp"

namespace gridcascade {

struct ExposureOptions {
  /// When false, self-loop edges are admitted at every step regardless of depth.
  bool mask_self_loops = true;
  unsigned threads = 1;
};

/// Edge flags (line-graph edge order) admitted at step t: d_source <= t.
std::vector<bool> mask_edges(const LineGraph& lg, const CascadeDepths& depths, int t,
                             bool mask_self_loops = true);

/// a_v = sum over steps t = 0..G-2 of the head-averaged attention on
/// admitted in-edges of v.
std::vector<double> masked_incoming_attention(const ForwardTrace& trace, const LineGraph& lg,
                                              const CascadeDepths& depths, const CascadeSample& sample,
                                              bool mask_self_loops = true);

/// Number of lines failing after the initial iteration.
int cascade_weight(const CascadeSample& sample);

/// Masked attention of each sample under a frozen model, in sample order.
std::vector<std::vector<double>> sample_attention(GruGatModel& model, const LineGraph& lg,
                                                  std::span<const CascadeSample> samples,
                                                  const ExposureOptions& opt = {});

/// Weighted mean of the first `count` per-sample vectors; ranks the result.
Ranking aggregate_attention(const PowerGrid& grid, std::span<const std::vector<double>> attention,
                            std::span<const CascadeSample> samples, std::size_t count);

Ranking aggregate_exposure(GruGatModel& model, const PowerGrid& grid, std::span<const CascadeSample> samples,
                           const ExposureOptions& opt = {});

}  // namespace gridcascade
