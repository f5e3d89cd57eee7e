#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridcascade/errors.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/powerflow.hpp"
#include "gridcascade/rng.hpp"

namespace testing {

using namespace gridcascade;

inline Line line(int id, int from, int to, double b = 1.0, double cap = 10.0) {
  return {id, from, to, b, cap};
}

/// b1 - b2 - ... - bn with generation at b1 and unit load at bn.
inline PowerGrid chain(int n, double b = 1.0) {
  std::vector<Bus> buses;
  for (int i = 1; i <= n; ++i) buses.push_back({i, i == 1 ? 1.0 : 0.0, i == n ? 1.0 : 0.0});
  std::vector<Line> lines;
  for (int i = 1; i < n; ++i) lines.push_back(line(i, i, i + 1, b));
  return PowerGrid("chain", buses, lines);
}

inline PowerGrid triangle(double gen = 1.0, double cap = 10.0) {
  return PowerGrid("triangle", {{1, gen, 0.0}, {2, 0.0, gen / 2}, {3, 0.0, gen / 2}},
                   {line(1, 1, 2, 1.0, cap), line(2, 2, 3, 1.0, cap), line(3, 3, 1, 1.0, cap)});
}

/// Random synthetic grid of either family with n buses.
inline PowerGrid random_grid(std::uint64_t seed, int n_min, int n_max, double capacity_factor = 1.3) {
  Rng rng(seed);
  SyntheticGridSpec spec;
  spec.n_buses = n_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_max - n_min + 1)));
  spec.family = uniform_index(rng, 2) == 0 ? GridFamily::kRingMesh : GridFamily::kHubSpoke;
  spec.capacity_factor = capacity_factor;
  spec.seed = seed;
  return generate_synthetic_grid(spec);
}

/// Independent DC solve of a connected operational subgrid: assembles the
/// full dense Laplacian, grounds the lowest-id bus and solves with full-pivot LU.
struct DenseSolve {
  Eigen::VectorXd theta;
  Eigen::VectorXd flow;
};

inline DenseSolve dense_dc(const PowerGrid& grid, const std::vector<bool>& active, const Eigen::VectorXd& p) {
  const auto n = static_cast<Eigen::Index>(grid.bus_count());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    if (!active[l]) continue;
    const auto i = static_cast<Eigen::Index>(grid.from_index(l));
    const auto j = static_cast<Eigen::Index>(grid.to_index(l));
    const double s = grid.lines()[l].susceptance;
    b(i, i) += s;
    b(j, j) += s;
    b(i, j) -= s;
    b(j, i) -= s;
  }
  Eigen::Index ref = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (grid.buses()[static_cast<std::size_t>(i)].id < grid.buses()[static_cast<std::size_t>(ref)].id) ref = i;
  }
  Eigen::MatrixXd a = b;
  Eigen::VectorXd rhs = p;
  a.row(ref).setZero();
  a.col(ref).setZero();
  a(ref, ref) = 1.0;
  rhs(ref) = 0.0;
  DenseSolve out;
  out.theta = a.fullPivLu().solve(rhs);
  out.flow = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.line_count()));
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    if (!active[l]) continue;
    out.flow(static_cast<Eigen::Index>(l)) =
        grid.lines()[l].susceptance * (out.theta(static_cast<Eigen::Index>(grid.from_index(l))) -
                                       out.theta(static_cast<Eigen::Index>(grid.to_index(l))));
  }
  return out;
}

inline Eigen::VectorXd grid_injections(const PowerGrid& g) {
  const auto p = g.injections();
  return Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
}

template <class F>
ErrorCategory category_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return static_cast<ErrorCategory>(-1);
}

template <class F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace testing
