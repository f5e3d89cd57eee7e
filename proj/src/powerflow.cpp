#include "gridcascade/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include "gridcascade/errors.hpp"

namespace gridcascade {

namespace {

constexpr double kPivotTolerance = 1e-12;
constexpr double kRadialTolerance = 1e-9;

/// Row/column of each bus in the reduced (reference-free) system, or -1 for
/// island references.
struct ReducedIndex {
  std::vector<int> row;
  std::vector<std::size_t> reference;  // per island, bus position
  int size = 0;
};

ReducedIndex reduce(const PowerGrid& grid, const std::vector<int>& island, int n_islands) {
  ReducedIndex idx;
  idx.reference.assign(n_islands, grid.bus_count());
  for (std::size_t b = 0; b < grid.bus_count(); ++b) {
    auto& ref = idx.reference[island[b]];
    if (ref == grid.bus_count() || grid.buses()[b].id < grid.buses()[ref].id) ref = b;
  }
  idx.row.assign(grid.bus_count(), -1);
  for (std::size_t b = 0; b < grid.bus_count(); ++b) {
    if (idx.reference[island[b]] != b) idx.row[b] = idx.size++;
  }
  return idx;
}

/// LDLT of the block-diagonal reduced susceptance Laplacian.
class ReducedLaplacian {
 public:
  ReducedLaplacian(const PowerGrid& grid, const ActiveMask& active, const ReducedIndex& idx) {
    const int n = idx.size;
    if (n == 0) return;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(4 * grid.line_count());
    for (std::size_t l = 0; l < grid.line_count(); ++l) {
      if (!active[l]) continue;
      const double b = grid.lines()[l].susceptance;
      const int i = idx.row[grid.from_index(l)];
      const int j = idx.row[grid.to_index(l)];
      if (i >= 0) trip.emplace_back(i, i, b);
      if (j >= 0) trip.emplace_back(j, j, b);
      if (i >= 0 && j >= 0) {
        trip.emplace_back(i, j, -b);
        trip.emplace_back(j, i, -b);
      }
    }
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    solver_.compute(m);
    if (solver_.info() != Eigen::Success) {
      fail(ErrorCategory::kSolver, "reduced susceptance matrix factorization failed");
    }
    const auto& d = solver_.vectorD();
    if (d.size() > 0 && d.minCoeff() <= kPivotTolerance) {
      fail(ErrorCategory::kSolver,
           fmt::format("singular reduced susceptance matrix (pivot {:.3g})", d.minCoeff()));
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return solver_.solve(rhs); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return solver_.solve(rhs); }

 private:
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

}  // namespace

ActiveMask all_active(const PowerGrid& grid) { return ActiveMask(grid.line_count(), true); }

std::vector<int> island_labels(const PowerGrid& grid, const ActiveMask& active) {
  std::vector<std::vector<std::size_t>> adj(grid.bus_count());
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    if (!active[l]) continue;
    adj[grid.from_index(l)].push_back(grid.to_index(l));
    adj[grid.to_index(l)].push_back(grid.from_index(l));
  }
  std::vector<int> label(grid.bus_count(), -1);
  int next = 0;
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < grid.bus_count(); ++s) {
    if (label[s] >= 0) continue;
    label[s] = next;
    queue.push_back(s);
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t v : adj[u]) {
        if (label[v] < 0) {
          label[v] = next;
          queue.push_back(v);
        }
      }
    }
    ++next;
  }
  return label;
}

FlowSolution solve_dc(const PowerGrid& grid, const ActiveMask& active) {
  const auto p = grid.injections();
  return solve_dc(grid, active, p);
}

FlowSolution solve_dc(const PowerGrid& grid, const ActiveMask& active,
                      std::span<const double> injections) {
  if (active.size() != grid.line_count()) {
    fail(ErrorCategory::kShape, "active mask size does not match line count");
  }
  FlowSolution sol;
  sol.island_id = island_labels(grid, active);
  const int n_islands =
      sol.island_id.empty() ? 0 : *std::max_element(sol.island_id.begin(), sol.island_id.end()) + 1;

  // Rebalance each island: surplus generation is curtailed pro-rata, a deficit
  // is met by shedding load pro-rata.
  std::vector<double> supply(n_islands, 0.0);
  std::vector<double> demand(n_islands, 0.0);
  for (std::size_t b = 0; b < grid.bus_count(); ++b) {
    const double pb = injections[b];
    (pb > 0 ? supply : demand)[sol.island_id[b]] += std::abs(pb);
  }
  sol.shed_load.assign(n_islands, 0.0);
  sol.curtailed_gen.assign(n_islands, 0.0);
  std::vector<double> gen_scale(n_islands, 1.0);
  std::vector<double> load_scale(n_islands, 1.0);
  for (int k = 0; k < n_islands; ++k) {
    if (supply[k] == 0.0 || demand[k] == 0.0) {
      gen_scale[k] = load_scale[k] = 0.0;
      sol.shed_load[k] = demand[k];
      sol.curtailed_gen[k] = supply[k];
    } else if (supply[k] > demand[k]) {
      gen_scale[k] = demand[k] / supply[k];
      sol.curtailed_gen[k] = supply[k] - demand[k];
    } else if (demand[k] > supply[k]) {
      load_scale[k] = supply[k] / demand[k];
      sol.shed_load[k] = demand[k] - supply[k];
    }
  }
  sol.injection.resize(grid.bus_count());
  for (std::size_t b = 0; b < grid.bus_count(); ++b) {
    const double pb = injections[b];
    sol.injection[b] = pb * (pb > 0 ? gen_scale : load_scale)[sol.island_id[b]];
  }

  const ReducedIndex idx = reduce(grid, sol.island_id, n_islands);
  sol.theta.assign(grid.bus_count(), 0.0);
  if (idx.size > 0) {
    const ReducedLaplacian lap(grid, active, idx);
    Eigen::VectorXd rhs(idx.size);
    for (std::size_t b = 0; b < grid.bus_count(); ++b) {
      if (idx.row[b] >= 0) rhs[idx.row[b]] = sol.injection[b];
    }
    const Eigen::VectorXd theta = lap.solve(rhs);
    for (std::size_t b = 0; b < grid.bus_count(); ++b) {
      if (idx.row[b] >= 0) sol.theta[b] = theta[idx.row[b]];
    }
  }
  sol.flow.assign(grid.line_count(), 0.0);
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    if (!active[l]) continue;
    sol.flow[l] = grid.lines()[l].susceptance *
                  (sol.theta[grid.from_index(l)] - sol.theta[grid.to_index(l)]);
  }
  return sol;
}

void write_flow_csv(const PowerGrid& grid, const FlowSolution& sol,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "line_id,flow,capacity,loading_ratio\n";
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    const Line& line = grid.lines()[l];
    out << fmt::format("{},{},{},{}\n", line.id, sol.flow[l], line.capacity,
                       std::abs(sol.flow[l]) / line.capacity);
  }
}

double SensitivityMatrices::transfer(std::size_t line, std::size_t from_bus,
                                     std::size_t to_bus) const {
  if (island_id[from_bus] != island_id[to_bus]) return 0.0;
  return ptdf(line, from_bus) - ptdf(line, to_bus);
}

SensitivityMatrices compute_ptdf(const PowerGrid& grid, const ActiveMask& active) {
  SensitivityMatrices sens;
  sens.island_id = island_labels(grid, active);
  const int n_islands = *std::max_element(sens.island_id.begin(), sens.island_id.end()) + 1;
  const ReducedIndex idx = reduce(grid, sens.island_id, n_islands);

  const std::size_t nb = grid.bus_count();
  sens.ptdf = Eigen::MatrixXd::Zero(grid.line_count(), nb);
  if (idx.size == 0) return sens;

  // X = reduced Laplacian inverse; reference rows and columns are zero.
  const ReducedLaplacian lap(grid, active, idx);
  const Eigen::MatrixXd x = lap.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(idx.size, idx.size)));
  for (std::size_t l = 0; l < grid.line_count(); ++l) {
    if (!active[l]) continue;
    const double b = grid.lines()[l].susceptance;
    const int i = idx.row[grid.from_index(l)];
    const int j = idx.row[grid.to_index(l)];
    for (std::size_t bus = 0; bus < nb; ++bus) {
      const int c = idx.row[bus];
      if (c < 0) continue;
      const double xi = i >= 0 ? x(i, c) : 0.0;
      const double xj = j >= 0 ? x(j, c) : 0.0;
      sens.ptdf(l, bus) = b * (xi - xj);
    }
  }
  return sens;
}

void compute_lodf(const PowerGrid& grid, const ActiveMask& active, SensitivityMatrices& sens) {
  const std::size_t nl = grid.line_count();
  sens.lodf = Eigen::MatrixXd::Zero(nl, nl);
  sens.radial.assign(nl, true);
  for (std::size_t k = 0; k < nl; ++k) {
    if (!active[k]) continue;
    const std::size_t i = grid.from_index(k);
    const std::size_t j = grid.to_index(k);
    const double denom = 1.0 - sens.transfer(k, i, j);
    if (std::abs(denom) < kRadialTolerance) continue;
    sens.radial[k] = false;
    for (std::size_t l = 0; l < nl; ++l) {
      if (!active[l]) continue;
      sens.lodf(l, k) = l == k ? -1.0 : sens.transfer(l, i, j) / denom;
    }
  }
}

SensitivityMatrices compute_sensitivities(const PowerGrid& grid, const ActiveMask& active) {
  SensitivityMatrices sens = compute_ptdf(grid, active);
  compute_lodf(grid, active, sens);
  return sens;
}

}  // namespace gridcascade
