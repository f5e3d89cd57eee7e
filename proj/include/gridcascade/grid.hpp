#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gridcascade {

struct Bus {
  int id = 0;
  double generation = 0.0;  // per-unit injection
  double load = 0.0;        // per-unit withdrawal

  bool operator==(const Bus&) const = default;
};

struct Line {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double susceptance = 1.0;
  double capacity = 1.0;

  bool operator==(const Line&) const = default;
};

/// Buses and lines of a transmission network. Immutable once validated.
///
/// Lines refer to buses by id; `bus_index` maps an id to its position in
/// `buses`. The constructor enforces: unique ids, existing endpoints, no
/// self-lines, no parallel lines, positive susceptance and capacity, finite
/// non-negative injections, a connected intact network and balanced totals.
class PowerGrid {
 public:
  static constexpr double kBalanceTolerance = 1e-9;

  PowerGrid(std::string name, std::vector<Bus> buses, std::vector<Line> lines);

  const std::string& name() const noexcept { return name_; }
  std::span<const Bus> buses() const noexcept { return buses_; }
  std::span<const Line> lines() const noexcept { return lines_; }
  std::size_t bus_count() const noexcept { return buses_.size(); }
  std::size_t line_count() const noexcept { return lines_.size(); }

  std::size_t bus_index(int bus_id) const;
  std::optional<std::size_t> line_index(int line_id) const;

  /// Endpoint positions (into `buses()`) of line `i`.
  std::size_t from_index(std::size_t i) const noexcept { return from_idx_[i]; }
  std::size_t to_index(std::size_t i) const noexcept { return to_idx_[i]; }

  /// Net injection generation - load per bus position.
  std::vector<double> injections() const;

  /// Same topology with line capacities replaced (used by generators).
  PowerGrid with_capacities(std::span<const double> capacities) const;

  bool operator==(const PowerGrid& other) const {
    return name_ == other.name_ && buses_ == other.buses_ && lines_ == other.lines_;
  }

 private:
  std::string name_;
  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  std::vector<std::size_t> from_idx_;
  std::vector<std::size_t> to_idx_;
  std::vector<std::pair<int, std::size_t>> bus_lookup_;   // sorted by id
  std::vector<std::pair<int, std::size_t>> line_lookup_;  // sorted by id
};

/// Lines-as-nodes graph. Node i is grid line i. Directed edges run
/// source -> target and include both directions of every adjacency plus one
/// self-loop per node. Edges are sorted by (target, source).
struct LineGraph {
  struct Edge {
    std::size_t source;
    std::size_t target;
    int shared_bus;  // bus id; -1 on self-loops

    bool is_self_loop() const noexcept { return source == target; }
    bool operator==(const Edge&) const = default;
  };

  std::size_t node_count = 0;
  std::vector<Edge> edges;

  std::vector<std::size_t> sources() const;
  std::vector<std::size_t> targets() const;
};

LineGraph build_line_graph(const PowerGrid& grid);

/// Multi-source BFS distance in the line graph from the initial failures.
class CascadeDepths {
 public:
  static constexpr int kUnreachable = -1;

  explicit CascadeDepths(std::vector<int> depth) : depth_(std::move(depth)) {}

  std::size_t size() const noexcept { return depth_.size(); }
  bool reachable(std::size_t node) const noexcept { return depth_[node] != kUnreachable; }
  /// Depth of a reachable node; call `reachable` first.
  int depth(std::size_t node) const noexcept { return depth_[node]; }
  /// True when the node's depth is known and no greater than `t`.
  bool within(std::size_t node, int t) const noexcept {
    return depth_[node] != kUnreachable && depth_[node] <= t;
  }
  std::span<const int> raw() const noexcept { return depth_; }

 private:
  std::vector<int> depth_;
};

/// `initial_failures` holds line-graph node indices.
CascadeDepths cascade_depth(const LineGraph& lg, std::span<const std::size_t> initial_failures);

enum class GridFamily { kRingMesh, kHubSpoke };

GridFamily parse_family(const std::string& s);
std::string family_name(GridFamily f);

struct SyntheticGridSpec {
  int n_buses = 30;
  GridFamily family = GridFamily::kRingMesh;
  double capacity_factor = 1.2;
  std::uint64_t seed = 0;
  std::string name;  // defaults to "<family>-<n>-<seed>"
};

PowerGrid generate_synthetic_grid(const SyntheticGridSpec& spec);

/// Reads `<dir>/buses.csv` and `<dir>/lines.csv`.
PowerGrid load_grid(const std::filesystem::path& dir, std::string name = {});
void save_grid(const PowerGrid& grid, const std::filesystem::path& dir);

}  // namespace gridcascade
