#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gridcascade/grid.hpp"

namespace gridcascade {

/// Per-line operational flag, indexed like `grid.lines()`.
using ActiveMask = std::vector<bool>;

ActiveMask all_active(const PowerGrid& grid);

struct FlowSolution {
  std::vector<double> theta;      // per bus position, radians
  std::vector<double> flow;       // per line position; 0 on inactive lines
  std::vector<int> island_id;     // per bus position, 0-based
  std::vector<double> injection;  // rebalanced net injection per bus
  std::vector<double> shed_load;      // per island
  std::vector<double> curtailed_gen;  // per island

  std::size_t island_count() const noexcept { return shed_load.size(); }
};

/// Connected components of the operational subgrid (labels in order of
/// first appearance by bus position).
std::vector<int> island_labels(const PowerGrid& grid, const ActiveMask& active);

/// DC power flow with per-island rebalancing and lowest-id angle reference.
FlowSolution solve_dc(const PowerGrid& grid, const ActiveMask& active);

/// Same as above with explicit injections in place of the grid's own.
FlowSolution solve_dc(const PowerGrid& grid, const ActiveMask& active,
                      std::span<const double> injections);

/// line_id,flow,capacity,loading_ratio
void write_flow_csv(const PowerGrid& grid, const FlowSolution& sol,
                    const std::filesystem::path& path);

/// Line-flow sensitivities of an operational subgrid.
///
/// `ptdf(l, b)` is the flow on line l for a unit injection at bus b withdrawn
/// at its island's reference bus; a transfer s->t is `ptdf(l,s) - ptdf(l,t)`
/// when both lie in one island and 0 otherwise.
struct SensitivityMatrices {
  Eigen::MatrixXd ptdf;        // lines x buses
  Eigen::MatrixXd lodf;        // impacted line x outaged line
  std::vector<bool> radial;    // per outaged line; lodf column invalid if set
  std::vector<int> island_id;  // per bus

  double transfer(std::size_t line, std::size_t from_bus, std::size_t to_bus) const;
};

SensitivityMatrices compute_ptdf(const PowerGrid& grid, const ActiveMask& active);

/// Fills `lodf` and `radial` from an existing PTDF.
void compute_lodf(const PowerGrid& grid, const ActiveMask& active, SensitivityMatrices& sens);

/// Both steps.
SensitivityMatrices compute_sensitivities(const PowerGrid& grid, const ActiveMask& active);

}  // namespace gridcascade
