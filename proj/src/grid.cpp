#include "gridcascade/grid.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"
#include "gridcascade/powerflow.hpp"
#include "gridcascade/rng.hpp"

namespace gridcascade {

namespace {

template <class T>
std::vector<std::pair<int, std::size_t>> id_lookup(const std::vector<T>& items, const char* what) {
  std::vector<std::pair<int, std::size_t>> lookup;
  lookup.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) lookup.emplace_back(items[i].id, i);
  std::sort(lookup.begin(), lookup.end());
  for (std::size_t i = 1; i < lookup.size(); ++i) {
    if (lookup[i].first == lookup[i - 1].first) {
      fail(ErrorCategory::kInvalidGrid, fmt::format("duplicate {} id {}", what, lookup[i].first));
    }
  }
  return lookup;
}

std::optional<std::size_t> find_id(const std::vector<std::pair<int, std::size_t>>& lookup, int id) {
  auto it = std::lower_bound(lookup.begin(), lookup.end(), std::pair<int, std::size_t>{id, 0});
  if (it == lookup.end() || it->first != id) return std::nullopt;
  return it->second;
}

}  // namespace

PowerGrid::PowerGrid(std::string name, std::vector<Bus> buses, std::vector<Line> lines)
    : name_(std::move(name)), buses_(std::move(buses)), lines_(std::move(lines)) {
  if (buses_.empty()) fail(ErrorCategory::kInvalidGrid, "grid has no buses");
  if (lines_.empty()) fail(ErrorCategory::kInvalidGrid, "grid has no lines");
  bus_lookup_ = id_lookup(buses_, "bus");
  line_lookup_ = id_lookup(lines_, "line");

  double total_gen = 0.0;
  double total_load = 0.0;
  for (const Bus& b : buses_) {
    if (!std::isfinite(b.generation) || !std::isfinite(b.load) || b.generation < 0.0 ||
        b.load < 0.0) {
      fail(ErrorCategory::kInvalidGrid,
           fmt::format("bus {}: generation and load must be finite and non-negative", b.id));
    }
    total_gen += b.generation;
    total_load += b.load;
  }
  if (std::abs(total_gen - total_load) > kBalanceTolerance) {
    fail(ErrorCategory::kInvalidGrid,
         fmt::format("unbalanced grid: generation {} vs load {}", total_gen, total_load));
  }

  std::set<std::pair<std::size_t, std::size_t>> corridors;
  from_idx_.reserve(lines_.size());
  to_idx_.reserve(lines_.size());
  for (const Line& l : lines_) {
    auto f = find_id(bus_lookup_, l.from_bus);
    auto t = find_id(bus_lookup_, l.to_bus);
    if (!f) fail(ErrorCategory::kInvalidGrid, fmt::format("unknown bus {}", l.from_bus));
    if (!t) fail(ErrorCategory::kInvalidGrid, fmt::format("unknown bus {}", l.to_bus));
    if (*f == *t) fail(ErrorCategory::kInvalidGrid, fmt::format("line {} connects bus {} to itself", l.id, l.from_bus));
    if (!(l.susceptance > 0.0) || !std::isfinite(l.susceptance)) {
      fail(ErrorCategory::kInvalidGrid, fmt::format("line {}: susceptance must be positive", l.id));
    }
    if (!(l.capacity > 0.0) || !std::isfinite(l.capacity)) {
      fail(ErrorCategory::kInvalidGrid, fmt::format("line {}: capacity must be positive", l.id));
    }
    if (!corridors.emplace(std::min(*f, *t), std::max(*f, *t)).second) {
      fail(ErrorCategory::kInvalidGrid,
           fmt::format("line {}: parallel line between buses {} and {}", l.id, l.from_bus, l.to_bus));
    }
    from_idx_.push_back(*f);
    to_idx_.push_back(*t);
  }

  const auto islands = island_labels(*this, all_active(*this));
  if (std::any_of(islands.begin(), islands.end(), [](int i) { return i != 0; })) {
    fail(ErrorCategory::kInvalidGrid, fmt::format("grid '{}' is not connected", name_));
  }
}

std::size_t PowerGrid::bus_index(int bus_id) const {
  auto idx = find_id(bus_lookup_, bus_id);
  if (!idx) fail(ErrorCategory::kInvalidGrid, fmt::format("unknown bus {}", bus_id));
  return *idx;
}

std::optional<std::size_t> PowerGrid::line_index(int line_id) const {
  return find_id(line_lookup_, line_id);
}

std::vector<double> PowerGrid::injections() const {
  std::vector<double> p(buses_.size());
  for (std::size_t i = 0; i < buses_.size(); ++i) p[i] = buses_[i].generation - buses_[i].load;
  return p;
}

PowerGrid PowerGrid::with_capacities(std::span<const double> capacities) const {
  std::vector<Line> lines = lines_;
  for (std::size_t i = 0; i < lines.size(); ++i) lines[i].capacity = capacities[i];
  return PowerGrid(name_, buses_, std::move(lines));
}

std::vector<std::size_t> LineGraph::sources() const {
  std::vector<std::size_t> s(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) s[e] = edges[e].source;
  return s;
}

std::vector<std::size_t> LineGraph::targets() const {
  std::vector<std::size_t> t(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) t[e] = edges[e].target;
  return t;
}

LineGraph build_line_graph(const PowerGrid& grid) {
  const std::size_t n_lines = grid.line_count();
  std::vector<std::vector<std::size_t>> incident(grid.bus_count());
  for (std::size_t l = 0; l < n_lines; ++l) {
    incident[grid.from_index(l)].push_back(l);
    incident[grid.to_index(l)].push_back(l);
  }

  LineGraph lg;
  lg.node_count = n_lines;
  for (std::size_t b = 0; b < incident.size(); ++b) {
    const auto& at_bus = incident[b];
    for (std::size_t i = 0; i < at_bus.size(); ++i) {
      for (std::size_t j = 0; j < at_bus.size(); ++j) {
        if (i != j) lg.edges.push_back({at_bus[i], at_bus[j], grid.buses()[b].id});
      }
    }
  }
  for (std::size_t l = 0; l < n_lines; ++l) lg.edges.push_back({l, l, -1});
  std::sort(lg.edges.begin(), lg.edges.end(), [](const auto& a, const auto& b) {
    return std::tie(a.target, a.source) < std::tie(b.target, b.source);
  });
  return lg;
}

CascadeDepths cascade_depth(const LineGraph& lg, std::span<const std::size_t> initial_failures) {
  if (initial_failures.empty()) {
    fail(ErrorCategory::kInvalidSample, "cascade depth needs at least one initial failure");
  }
  std::vector<std::vector<std::size_t>> out(lg.node_count);
  for (const auto& e : lg.edges) {
    if (!e.is_self_loop()) out[e.source].push_back(e.target);
  }
  std::vector<int> depth(lg.node_count, CascadeDepths::kUnreachable);
  std::deque<std::size_t> queue;
  for (std::size_t s : initial_failures) {
    if (s >= lg.node_count) {
      fail(ErrorCategory::kInvalidSample, fmt::format("initial failure {} out of range", s));
    }
    if (depth[s] != 0) {
      depth[s] = 0;
      queue.push_back(s);
    }
  }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : out[u]) {
      if (depth[v] == CascadeDepths::kUnreachable) {
        depth[v] = depth[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return CascadeDepths(std::move(depth));
}

GridFamily parse_family(const std::string& s) {
  if (s == "ring-mesh") return GridFamily::kRingMesh;
  if (s == "hub-spoke") return GridFamily::kHubSpoke;
  fail(ErrorCategory::kConfig, fmt::format("unknown grid family '{}'", s));
}

std::string family_name(GridFamily f) {
  return f == GridFamily::kRingMesh ? "ring-mesh" : "hub-spoke";
}

namespace {

using Edge = std::pair<int, int>;

void add_edge(std::set<Edge>& edges, int a, int b) {
  if (a != b) edges.emplace(std::min(a, b), std::max(a, b));
}

std::set<Edge> ring_mesh_topology(int n, Rng& rng) {
  std::set<Edge> edges;
  for (int i = 0; i < n; ++i) add_edge(edges, i, (i + 1) % n);
  const int chords = n / 3;
  const int max_edges = n * (n - 1) / 2;
  for (int added = 0, tries = 0; added < chords && tries < 100 * n; ++tries) {
    if (static_cast<int>(edges.size()) >= max_edges) break;
    const int a = static_cast<int>(uniform_index(rng, n));
    const int b = static_cast<int>(uniform_index(rng, n));
    if (a == b) continue;
    if (edges.emplace(std::min(a, b), std::max(a, b)).second) ++added;
  }
  return edges;
}

std::set<Edge> hub_spoke_topology(int n, Rng& rng) {
  std::set<Edge> edges;
  const int hubs = std::max(2, n / 8);
  for (int h = 0; h + 1 < hubs; ++h) add_edge(edges, h, h + 1);
  if (hubs >= 3) add_edge(edges, hubs - 1, 0);
  std::vector<int> home(n, 0);
  for (int s = hubs; s < n; ++s) {
    home[s] = static_cast<int>(uniform_index(rng, hubs));
    add_edge(edges, s, home[s]);
  }
  // Second attachments mesh spokes to a neighbour spoke of the same hub or
  // to another hub, so that few spoke lines are radial.
  for (int s = hubs; s < n; ++s) {
    if (uniform01(rng) < 0.6) {
      const int other = hubs + static_cast<int>(uniform_index(rng, n - hubs));
      if (other != s && home[other] == home[s]) {
        add_edge(edges, s, other);
        continue;
      }
    }
    if (uniform01(rng) < 0.5) add_edge(edges, s, static_cast<int>(uniform_index(rng, hubs)));
  }
  return edges;
}

}  // namespace

PowerGrid generate_synthetic_grid(const SyntheticGridSpec& spec) {
  if (spec.n_buses < 3) fail(ErrorCategory::kConfig, "synthetic grid needs n_buses >= 3");
  if (!(spec.capacity_factor > 1.0)) fail(ErrorCategory::kConfig, "capacity_factor must exceed 1");

  Rng rng(derive_seed(spec.seed, "synthetic-grid"));
  const int n = spec.n_buses;
  const std::set<Edge> edges = spec.family == GridFamily::kRingMesh ? ring_mesh_topology(n, rng)
                                                                    : hub_spoke_topology(n, rng);

  // Generators on roughly a quarter of the buses (hubs first for hub-spoke);
  // every other bus carries load.
  std::vector<Bus> buses(n);
  const int n_gen = std::max(1, n / 4);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (spec.family == GridFamily::kRingMesh) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  }
  std::vector<bool> is_gen(n, false);
  for (int i = 0; i < n_gen; ++i) is_gen[order[i]] = true;

  double total_load = 0.0;
  double gen_weight = 0.0;
  std::vector<double> weights(n, 0.0);
  for (int i = 0; i < n; ++i) {
    buses[i].id = i + 1;
    if (is_gen[i]) {
      weights[i] = 0.5 + uniform01(rng);
      gen_weight += weights[i];
    } else {
      buses[i].load = 0.5 + uniform01(rng);
      total_load += buses[i].load;
    }
  }
  double assigned = 0.0;
  int last_gen = -1;
  for (int i = 0; i < n; ++i) {
    if (!is_gen[i]) continue;
    buses[i].generation = total_load * weights[i] / gen_weight;
    assigned += buses[i].generation;
    last_gen = i;
  }
  buses[last_gen].generation += total_load - assigned;

  std::vector<Line> lines;
  lines.reserve(edges.size());
  int next_id = 1;
  for (const auto& [a, b] : edges) {
    lines.push_back({next_id++, a + 1, b + 1, 5.0 + 15.0 * uniform01(rng), 1.0});
  }

  std::string name = spec.name.empty()
                         ? fmt::format("{}-{}-{}", family_name(spec.family), n, spec.seed)
                         : spec.name;
  PowerGrid draft(name, std::move(buses), std::move(lines));
  const FlowSolution base = solve_dc(draft, all_active(draft));
  double mean_flow = 0.0;
  for (double f : base.flow) mean_flow += std::abs(f);
  mean_flow /= static_cast<double>(base.flow.size());
  const double floor = 0.05 * mean_flow + 1e-6;
  std::vector<double> caps(base.flow.size());
  for (std::size_t l = 0; l < caps.size(); ++l) {
    caps[l] = spec.capacity_factor * std::abs(base.flow[l]) + floor;
  }
  return draft.with_capacities(caps);
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvRow {
  std::size_t line_no;
  std::vector<std::string> cells;
};

std::vector<CsvRow> read_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kParse, fmt::format("cannot open {}", path.string()));
  const std::string file = path.filename().string();
  std::vector<CsvRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto cells = split_csv(line);
    if (!saw_header) {
      if (cells != header) {
        fail(ErrorCategory::kParse,
             fmt::format("{}:{}: expected header '{}'", file, line_no, fmt::join(header, ",")));
      }
      saw_header = true;
      continue;
    }
    if (cells.size() != header.size()) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: expected {} fields, got {}", file, line_no,
                                              header.size(), cells.size()));
    }
    rows.push_back({line_no, std::move(cells)});
  }
  if (!saw_header) fail(ErrorCategory::kParse, fmt::format("{}: missing header row", file));
  return rows;
}

double parse_real(const std::string& s, const std::string& file, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    fail(ErrorCategory::kParse, fmt::format("{}:{}: malformed number '{}'", file, line_no, s));
  }
  return v;
}

int parse_int(const std::string& s, const std::string& file, std::size_t line_no) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    fail(ErrorCategory::kParse, fmt::format("{}:{}: malformed integer '{}'", file, line_no, s));
  }
  return static_cast<int>(v);
}

}  // namespace

PowerGrid load_grid(const std::filesystem::path& dir, std::string name) {
  const auto bus_rows = read_csv(dir / "buses.csv", {"id", "generation", "load"});
  const auto line_rows =
      read_csv(dir / "lines.csv", {"id", "from_bus", "to_bus", "susceptance", "capacity"});

  std::vector<Bus> buses;
  std::set<int> bus_ids;
  for (const auto& r : bus_rows) {
    Bus b{parse_int(r.cells[0], "buses.csv", r.line_no), parse_real(r.cells[1], "buses.csv", r.line_no),
          parse_real(r.cells[2], "buses.csv", r.line_no)};
    if (!bus_ids.insert(b.id).second) {
      fail(ErrorCategory::kParse, fmt::format("buses.csv:{}: duplicate bus id {}", r.line_no, b.id));
    }
    buses.push_back(b);
  }
  if (line_rows.empty()) fail(ErrorCategory::kParse, "grid has no lines");
  std::vector<Line> lines;
  std::set<int> line_ids;
  for (const auto& r : line_rows) {
    Line l{parse_int(r.cells[0], "lines.csv", r.line_no), parse_int(r.cells[1], "lines.csv", r.line_no),
           parse_int(r.cells[2], "lines.csv", r.line_no), parse_real(r.cells[3], "lines.csv", r.line_no),
           parse_real(r.cells[4], "lines.csv", r.line_no)};
    for (int endpoint : {l.from_bus, l.to_bus}) {
      if (!bus_ids.contains(endpoint)) {
        fail(ErrorCategory::kParse, fmt::format("lines.csv:{}: unknown bus {}", r.line_no, endpoint));
      }
    }
    if (!line_ids.insert(l.id).second) {
      fail(ErrorCategory::kParse, fmt::format("lines.csv:{}: duplicate line id {}", r.line_no, l.id));
    }
    lines.push_back(l);
  }
  if (name.empty()) {
    std::ifstream in(dir / "buses.csv");
    std::string first;
    std::getline(in, first);
    if (first.rfind("# grid ", 0) == 0) {
      name = first.substr(7);
      while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    }
  }
  if (name.empty()) name = dir.filename().string();
  try {
    return PowerGrid(std::move(name), std::move(buses), std::move(lines));
  } catch (const Error& e) {
    fail(ErrorCategory::kParse, e.what());
  }
}

void save_grid(const PowerGrid& grid, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream buses(dir / "buses.csv");
  buses << "# grid " << grid.name() << "\n";
  buses << "id,generation,load\n";
  for (const Bus& b : grid.buses()) buses << fmt::format("{},{},{}\n", b.id, b.generation, b.load);
  std::ofstream lines(dir / "lines.csv");
  lines << "id,from_bus,to_bus,susceptance,capacity\n";
  for (const Line& l : grid.lines()) {
    lines << fmt::format("{},{},{},{},{}\n", l.id, l.from_bus, l.to_bus, l.susceptance, l.capacity);
  }
  if (!buses || !lines) fail(ErrorCategory::kParse, fmt::format("failed writing grid to {}", dir.string()));
}

}  // namespace gridcascade
