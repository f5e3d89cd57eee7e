#pragma once

#include <Eigen/Dense>

#include "gridcascade/grid.hpp"
#include "gridcascade/ranking.hpp"

namespace gridcascade {

/// Mean absolute line flow over unit transfers between every unordered bus
/// pair of the intact grid.
Ranking electric_betweenness(const PowerGrid& grid);

struct PageRankOptions {
  double damping = 0.85;
  double tolerance = 1e-12;  // L1 change between iterates
  int max_iterations = 10000;
};

/// Stationary vector of the column-stochastic |LODF| transition matrix
/// (outaged line k votes for impacted lines l), damped towards uniform.
Ranking bodf_pagerank(const PowerGrid& grid, const PageRankOptions& opt = {});

/// The normalized transition matrix used by `bodf_pagerank`.
Eigen::MatrixXd bodf_transition(const PowerGrid& grid);

}  // namespace gridcascade
