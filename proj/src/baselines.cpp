#include "gridcascade/baselines.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"
#include "gridcascade/powerflow.hpp"

namespace gridcascade {

Ranking electric_betweenness(const PowerGrid& grid) {
  const SensitivityMatrices sens = compute_ptdf(grid, all_active(grid));
  const std::size_t n = grid.bus_count();
  const std::size_t pairs = n * (n - 1) / 2;
  std::vector<double> eb(grid.line_count(), 0.0);
  for (std::size_t l = 0; l < eb.size(); ++l) {
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) s += std::abs(sens.ptdf(l, a) - sens.ptdf(l, b));
    }
    eb[l] = s / static_cast<double>(pairs);
  }
  return make_ranking(grid, std::move(eb), "EB");
}

Eigen::MatrixXd bodf_transition(const PowerGrid& grid) {
  const SensitivityMatrices sens = compute_sensitivities(grid, all_active(grid));
  const auto n = static_cast<Eigen::Index>(grid.line_count());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double col = 0.0;
    if (!sens.radial[static_cast<std::size_t>(k)]) {
      for (Eigen::Index l = 0; l < n; ++l) {
        m(l, k) = l == k ? 0.0 : std::abs(sens.lodf(l, k));
        col += m(l, k);
      }
    }
    if (col > 0.0) {
      m.col(k) /= col;
    } else {
      m.col(k).setConstant(1.0 / static_cast<double>(n));
    }
  }
  return m;
}

Ranking bodf_pagerank(const PowerGrid& grid, const PageRankOptions& opt) {
  if (!(opt.damping >= 0.0 && opt.damping < 1.0)) {
    fail(ErrorCategory::kConfig, fmt::format("damping {} outside [0, 1)", opt.damping));
  }
  const Eigen::MatrixXd m = bodf_transition(grid);
  const auto n = m.rows();
  const double teleport = (1.0 - opt.damping) / static_cast<double>(n);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::VectorXd next = (opt.damping * (m * x)).array() + teleport;
    next /= next.sum();
    const double delta = (next - x).lpNorm<1>();
    x = std::move(next);
    if (delta < opt.tolerance) {
      return make_ranking(grid, std::vector<double>(x.data(), x.data() + n), "PR");
    }
  }
  fail(ErrorCategory::kNumeric,
       fmt::format("PageRank did not converge in {} iterations", opt.max_iterations));
}

}  // namespace gridcascade
