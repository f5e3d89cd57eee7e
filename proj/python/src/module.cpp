// Python bindings for the gridcascade library.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gridcascade/baselines.hpp"
#include "gridcascade/cascade.hpp"
#include "gridcascade/config.hpp"
#include "gridcascade/errors.hpp"
#include "gridcascade/exposure.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/metrics.hpp"
#include "gridcascade/model.hpp"
#include "gridcascade/pipeline.hpp"
#include "gridcascade/powerflow.hpp"
#include "gridcascade/ranking.hpp"

namespace py = pybind11;
namespace gc = gridcascade;

namespace {

gc::ActiveMask mask_or_all(const gc::PowerGrid& grid, const std::optional<std::vector<bool>>& active) {
  if (!active) return gc::all_active(grid);
  if (active->size() != grid.line_count())
    throw py::value_error("active mask must have one entry per line");
  return *active;
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<gc::CascadeSample> samples_of(const py::iterable& items) {
  std::vector<gc::CascadeSample> out;
  for (auto item : items) out.push_back(item.cast<gc::CascadeSample>());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Power-grid cascade simulation, GRU-GAT training and cascade exposure rankings";

  // Library errors surface as gridcascade.Error with a `category` attribute.
  py::exception<gc::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const gc::Error& e) {
      py::object cls = py::module_::import("gridcascade._core").attr("Error");
      py::object instance = cls(e.what());
      instance.attr("category") = std::string(gc::category_name(e.category()));
      PyErr_SetObject(cls.ptr(), instance.ptr());
    }
  });

  // --- grids -----------------------------------------------------------------
  py::class_<gc::Bus>(m, "Bus")
      .def_readonly("id", &gc::Bus::id)
      .def_readonly("generation", &gc::Bus::generation)
      .def_readonly("load", &gc::Bus::load);
  py::class_<gc::Line>(m, "Line")
      .def_readonly("id", &gc::Line::id)
      .def_readonly("from_bus", &gc::Line::from_bus)
      .def_readonly("to_bus", &gc::Line::to_bus)
      .def_readonly("susceptance", &gc::Line::susceptance)
      .def_readonly("capacity", &gc::Line::capacity);

  py::class_<gc::PowerGrid>(m, "PowerGrid")
      .def(py::init([](std::string name, const std::vector<std::tuple<int, double, double>>& buses,
                       const std::vector<std::tuple<int, int, int, double, double>>& lines) {
             std::vector<gc::Bus> b;
             for (auto [id, g, l] : buses) b.push_back({id, g, l});
             std::vector<gc::Line> ls;
             for (auto [id, f, t, s, c] : lines) ls.push_back({id, f, t, s, c});
             return gc::PowerGrid(std::move(name), std::move(b), std::move(ls));
           }),
           py::arg("name"), py::arg("buses"), py::arg("lines"),
           "buses: (id, generation, load) tuples; lines: (id, from_bus, to_bus, susceptance, capacity)")
      .def_property_readonly("name", &gc::PowerGrid::name)
      .def_property_readonly("bus_count", &gc::PowerGrid::bus_count)
      .def_property_readonly("line_count", &gc::PowerGrid::line_count)
      .def_property_readonly("buses", [](const gc::PowerGrid& g) {
        return std::vector<gc::Bus>(g.buses().begin(), g.buses().end());
      })
      .def_property_readonly("lines", [](const gc::PowerGrid& g) {
        return std::vector<gc::Line>(g.lines().begin(), g.lines().end());
      })
      .def("__repr__", [](const gc::PowerGrid& g) {
        return "<PowerGrid '" + g.name() + "' buses=" + std::to_string(g.bus_count()) +
               " lines=" + std::to_string(g.line_count()) + ">";
      });

  m.def("generate_grid",
        [](int n_buses, const std::string& family, double capacity_factor, std::uint64_t seed, std::string name) {
          return gc::generate_synthetic_grid({n_buses, gc::parse_family(family), capacity_factor, seed, name});
        },
        py::arg("n_buses"), py::arg("family") = "ring-mesh", py::arg("capacity_factor") = 1.2,
        py::arg("seed") = 0, py::arg("name") = "", "Synthetic grid of the 'ring-mesh' or 'hub-spoke' family.");
  m.def("load_grid", &gc::load_grid, py::arg("directory"), py::arg("name") = "");
  m.def("save_grid", &gc::save_grid, py::arg("grid"), py::arg("directory"));

  m.def("line_graph_edges",
        [](const gc::PowerGrid& g) {
          const gc::LineGraph lg = gc::build_line_graph(g);
          return py::make_tuple(lg.sources(), lg.targets());
        },
        "(sources, targets) of the line graph, self-loops included.");
  m.def("cascade_depth",
        [](const gc::PowerGrid& g, const std::vector<std::size_t>& initial) {
          const auto d = gc::cascade_depth(gc::build_line_graph(g), initial);
          return std::vector<int>(d.raw().begin(), d.raw().end());
        },
        py::arg("grid"), py::arg("initial_failures"), "Line-graph BFS depth per line; -1 when unreachable.");

  // --- power flow ------------------------------------------------------------
  m.def("solve_dc",
        [](const gc::PowerGrid& g, std::optional<std::vector<bool>> active) {
          const gc::FlowSolution s = gc::solve_dc(g, mask_or_all(g, active));
          py::dict out;
          out["theta"] = to_array(s.theta);
          out["flow"] = to_array(s.flow);
          out["injection"] = to_array(s.injection);
          out["island_id"] = s.island_id;
          return out;
        },
        py::arg("grid"), py::arg("active") = py::none());
  m.def("sensitivities",
        [](const gc::PowerGrid& g, std::optional<std::vector<bool>> active) {
          const gc::SensitivityMatrices s = gc::compute_sensitivities(g, mask_or_all(g, active));
          py::dict out;
          out["ptdf"] = s.ptdf;
          out["lodf"] = s.lodf;
          out["radial"] = s.radial;
          return out;
        },
        py::arg("grid"), py::arg("active") = py::none(), "PTDF (lines x buses) and LODF (lines x lines).");

  // --- cascades --------------------------------------------------------------
  py::class_<gc::CascadeSample>(m, "CascadeSample")
      .def(py::init([](std::string grid_name, std::vector<int> labels) {
             gc::CascadeSample s;
             s.grid_name = std::move(grid_name);
             s.labels = std::move(labels);
             for (int l : s.labels) s.max_iteration = std::max(s.max_iteration, l);
             gc::validate_sample(s);
             return s;
           }),
           py::arg("grid_name"), py::arg("labels"))
      .def_readonly("grid_name", &gc::CascadeSample::grid_name)
      .def_readonly("labels", &gc::CascadeSample::labels)
      .def_readonly("max_iteration", &gc::CascadeSample::max_iteration)
      .def_readonly("seed", &gc::CascadeSample::seed)
      .def_property_readonly("initial_failures", &gc::CascadeSample::initial_failures)
      .def_property_readonly("propagated_count", &gc::CascadeSample::propagated_count)
      .def("__eq__", [](const gc::CascadeSample& a, const gc::CascadeSample& b) { return a == b; });

  m.def("simulate_cascade",
        [](const gc::PowerGrid& g, const std::vector<std::size_t>& initial) {
          return gc::simulate_cascade(g, initial);
        },
        py::arg("grid"), py::arg("initial_failures"), "Initial failures are line positions.");
  m.def("cascade_pool",
        [](const gc::PowerGrid& g, std::size_t n, int k_min, int k_max, std::uint64_t seed, const std::string& role,
           unsigned threads) {
          return gc::build_cascade_pool(g, n, {k_min, k_max}, seed, gc::parse_role(role), threads).samples;
        },
        py::arg("grid"), py::arg("n"), py::arg("k_min") = 1, py::arg("k_max") = 3, py::arg("seed") = 0,
        py::arg("role") = "heldout", py::arg("threads") = 1, "n propagating cascades (G >= 2).");
  m.def("training_samples",
        [](const std::vector<gc::PowerGrid>& grids, std::size_t pool_per_grid, std::size_t cap, std::uint64_t seed,
           int max_label, unsigned threads) {
          gc::TrainingDatasetOptions opt;
          opt.pool_per_grid = pool_per_grid;
          opt.cap = cap;
          opt.seed = seed;
          opt.max_label = max_label;
          opt.threads = threads;
          return gc::build_training_dataset(grids, opt).samples;
        },
        py::arg("grids"), py::arg("pool_per_grid") = 2000, py::arg("cap") = 5000, py::arg("seed") = 0,
        py::arg("max_label") = 99, py::arg("threads") = 1);

  // --- model -----------------------------------------------------------------
  py::class_<gc::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("hidden_dim", &gc::ModelConfig::hidden_dim)
      .def_readwrite("heads", &gc::ModelConfig::heads)
      .def_readwrite("classes", &gc::ModelConfig::classes)
      .def_readwrite("lr", &gc::ModelConfig::lr)
      .def_readwrite("accumulation_steps", &gc::ModelConfig::accumulation_steps)
      .def_readwrite("max_epochs", &gc::ModelConfig::max_epochs)
      .def_readwrite("patience", &gc::ModelConfig::patience)
      .def_readwrite("validation_fraction", &gc::ModelConfig::validation_fraction)
      .def_readwrite("seed", &gc::ModelConfig::seed);

  py::class_<gc::EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &gc::EpochRecord::epoch)
      .def_readonly("train_loss", &gc::EpochRecord::train_loss)
      .def_readonly("validation_loss", &gc::EpochRecord::validation_loss)
      .def_readonly("lr_end", &gc::EpochRecord::lr_end);

  py::class_<gc::GruGatModel>(m, "GruGatModel")
      .def(py::init<const gc::ModelConfig&>(), py::arg("config"))
      .def_property_readonly("config", &gc::GruGatModel::config)
      .def_property_readonly("parameter_count", [](const gc::GruGatModel& mdl) { return mdl.params().scalar_count(); })
      .def("predict",
           [](gc::GruGatModel& mdl, const gc::PowerGrid& g, const gc::CascadeSample& s) {
             return mdl.predict(s, gc::EdgeIndex(gc::build_line_graph(g)));
           },
           py::arg("grid"), py::arg("sample"))
      .def("loss",
           [](gc::GruGatModel& mdl, const gc::PowerGrid& g, const gc::CascadeSample& s) {
             return mdl.loss(s, gc::EdgeIndex(gc::build_line_graph(g)));
           },
           py::arg("grid"), py::arg("sample"))
      .def("save", [](const gc::GruGatModel& mdl, const std::filesystem::path& p) { gc::save_checkpoint(mdl, p); })
      .def_static("load", [](const std::filesystem::path& p) { return gc::load_checkpoint(p); });

  m.def("train",
        [](gc::GruGatModel& mdl, const std::vector<gc::PowerGrid>& grids, const py::iterable& samples,
           std::function<void(const gc::EpochRecord&)> on_epoch) {
          gc::Dataset ds;
          ds.samples = samples_of(samples);
          gc::LineGraphIndex graphs;
          for (const auto& g : grids) graphs.emplace(g.name(), gc::EdgeIndex(gc::build_line_graph(g)));
          const gc::TrainingHistory h = gc::train(mdl, ds, graphs, on_epoch ? on_epoch : gc::EpochCallback{});
          return h.epochs;
        },
        py::arg("model"), py::arg("grids"), py::arg("samples"), py::arg("on_epoch") = nullptr,
        "Trains in place; returns the per-epoch history. The best validation weights are kept.");

  // --- rankings --------------------------------------------------------------
  py::class_<gc::Ranking>(m, "Ranking")
      .def_readonly("method", &gc::Ranking::method)
      .def_readonly("line_id", &gc::Ranking::line_id)
      .def_readonly("score", &gc::Ranking::score)
      .def_readonly("rank", &gc::Ranking::rank)
      .def_readonly("sample_count", &gc::Ranking::sample_count)
      .def("__len__", &gc::Ranking::size);

  m.def("make_ranking", &gc::make_ranking, py::arg("grid"), py::arg("scores"), py::arg("method"));
  m.def("exposure",
        [](gc::GruGatModel& mdl, const gc::PowerGrid& g, const py::iterable& samples, bool mask_self_loops,
           unsigned threads) {
          const auto s = samples_of(samples);
          return gc::aggregate_exposure(mdl, g, s, {mask_self_loops, threads});
        },
        py::arg("model"), py::arg("grid"), py::arg("samples"), py::arg("mask_self_loops") = true,
        py::arg("threads") = 1, "Cascade exposure ranking from a frozen model.");
  m.def("electric_betweenness", &gc::electric_betweenness, py::arg("grid"));
  m.def("bodf_pagerank",
        [](const gc::PowerGrid& g, double damping) { return gc::bodf_pagerank(g, {damping, 1e-12, 10000}); },
        py::arg("grid"), py::arg("damping") = 0.85);

  // --- metrics ---------------------------------------------------------------
  py::class_<gc::VulnerabilityTable>(m, "VulnerabilityTable")
      .def_readonly("line_id", &gc::VulnerabilityTable::line_id)
      .def_readonly("total", &gc::VulnerabilityTable::total)
      .def_readonly("shallow", &gc::VulnerabilityTable::shallow)
      .def_readonly("deep", &gc::VulnerabilityTable::deep)
      .def_readonly("avg_depth", &gc::VulnerabilityTable::avg_depth)
      .def_readonly("avg_scale", &gc::VulnerabilityTable::avg_scale)
      .def_readonly("cutoff", &gc::VulnerabilityTable::cutoff);

  auto bin_of = [](const std::string& b) {
    if (b == "total") return gc::VulBin::kTotal;
    if (b == "shallow") return gc::VulBin::kShallow;
    if (b == "deep") return gc::VulBin::kDeep;
    throw py::value_error("bin must be 'total', 'shallow' or 'deep'");
  };
  m.def("ground_truth_vulnerability",
        [](const gc::PowerGrid& g, const py::iterable& samples) {
          const auto s = samples_of(samples);
          return gc::ground_truth_vulnerability(g, s);
        },
        py::arg("grid"), py::arg("holdout"));
  m.def("mean_top_tau",
        [bin_of](const gc::Ranking& r, const gc::VulnerabilityTable& v, double tau, const std::string& bin) {
          return gc::mean_top_tau(r, v, tau, bin_of(bin));
        },
        py::arg("ranking"), py::arg("vulnerability"), py::arg("tau_percent"), py::arg("bin") = "total");
  m.def("mean_percentile_rank",
        [bin_of](const gc::Ranking& r, const gc::VulnerabilityTable& v, const std::string& bin) {
          return gc::mean_percentile_rank(r, gc::high_exposure_set(v, bin_of(bin)));
        },
        py::arg("ranking"), py::arg("vulnerability"), py::arg("bin") = "total");
  m.def("kendall_tau", &gc::kendall_tau, py::arg("a"), py::arg("b"));
  m.def("macro_f1",
        [](const std::vector<int>& truth, const std::vector<int>& pred) { return gc::macro_f1(truth, pred); },
        py::arg("truth"), py::arg("predicted"));

  // --- pipeline --------------------------------------------------------------
  m.def("run_stage",
        [](const std::filesystem::path& config, const std::string& stage, std::optional<std::filesystem::path> out,
           std::optional<std::uint64_t> seed) {
          gc::ExperimentConfig c = gc::load_experiment_config(config);
          if (out) c.out_dir = *out;
          if (seed) c.seed = *seed;
          gc::Pipeline p(c);
          using Stage = void (gc::Pipeline::*)();
          const std::map<std::string, Stage> stages{
              {"grid-gen", &gc::Pipeline::grid_gen}, {"dataset-build", &gc::Pipeline::dataset_build},
              {"train", &gc::Pipeline::train},       {"exposure", &gc::Pipeline::exposure},
              {"baseline", &gc::Pipeline::baseline}, {"evaluate", &gc::Pipeline::evaluate},
              {"report", &gc::Pipeline::report},     {"run-all", &gc::Pipeline::run_all}};
          auto it = stages.find(stage);
          if (it == stages.end()) throw py::value_error("unknown stage '" + stage + "'");
          {
            py::gil_scoped_release release;
            (p.*(it->second))();
          }
          return p.out_dir();
        },
        py::arg("config"), py::arg("stage") = "run-all", py::arg("out") = py::none(), py::arg("seed") = py::none(),
        "Runs one pipeline stage; returns the output directory.");

  m.attr("__version__") = gc::kToolVersion;
}
