#include "gridcascade/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include "json.hpp"
#include <zlib.h>

#include "gridcascade/errors.hpp"
#include "gridcascade/rng.hpp"

namespace gridcascade {

using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  if (hidden_dim <= 0 || heads <= 0 || hidden_dim % heads != 0) {
    fail(ErrorCategory::kConfig,
         fmt::format("hidden_dim {} must be a positive multiple of heads {}", hidden_dim, heads));
  }
  if (classes < 2) fail(ErrorCategory::kConfig, "classes must be at least 2");
  if (!(lr > 0.0)) fail(ErrorCategory::kConfig, "lr must be positive");
  if (accumulation_steps < 1) fail(ErrorCategory::kConfig, "accumulation_steps must be >= 1");
  if (max_epochs < 1 || patience < 1) fail(ErrorCategory::kConfig, "max_epochs and patience must be >= 1");
  if (scheduler_t0 < 1 || scheduler_tmult < 1) fail(ErrorCategory::kConfig, "invalid scheduler period");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    fail(ErrorCategory::kConfig, "validation_fraction must lie in [0, 1)");
  }
}

double ForwardTrace::mean_alpha(std::size_t t, std::size_t edge) const {
  const Tensor& a = alpha[t];
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(edge, k);
  return s / static_cast<double>(a.cols());
}

EdgeIndex::EdgeIndex(const LineGraph& lg) : node_count(lg.node_count), source(lg.sources()), target(lg.targets()) {}

GatOutput gat_layer(Var h, const EdgeIndex& edges, const GatWeights& w, std::size_t heads) {
  const Var projected = ad::matmul(h, w.projection);
  const Var score_src = ad::head_dot(projected, w.a_src);
  const Var score_dst = ad::head_dot(projected, w.a_dst);
  const Var logits = ad::leaky_relu(
      ad::add(ad::gather_rows(score_src, edges.source), ad::gather_rows(score_dst, edges.target)), 0.2);
  const Var alpha = ad::segment_softmax(logits, edges.target, edges.node_count);
  return {ad::attend(projected, alpha, edges.source, edges.target, edges.node_count, heads), alpha};
}

GruOutput gru_gate(Var h_prev, Var h_new, const GruWeights& w) {
  const Var joint = ad::concat({h_prev, h_new});
  const Var z = ad::sigmoid(ad::add(ad::matmul(joint, w.wz), w.bz));
  const Var r = ad::sigmoid(ad::add(ad::matmul(joint, w.wr), w.br));
  const Var candidate =
      ad::tanh(ad::add(ad::matmul(ad::concat({ad::mul(r, h_prev), h_new}), w.wh), w.bh));
  // (1 - z) * h_prev + z * candidate
  const Var h = ad::add(h_prev, ad::mul(z, ad::sub(candidate, h_prev)));
  return {h, candidate, z};
}

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return t;
}

}  // namespace

GruGatModel::GruGatModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.hidden_dim;
  const std::size_t h = config_.heads;
  const std::size_t hd = config_.head_dim();
  const std::size_t c = config_.classes;
  Rng rng(derive_seed(config_.seed, "model-init"));

  Tensor embedding = Tensor::matrix(c, d);
  for (double& v : embedding.values()) v = 0.02 * standard_normal(rng);
  params_.add("embedding", std::move(embedding));

  params_.add("gat.projection", glorot(d, h * hd, rng));
  params_.add("gat.a_src", glorot(h, hd, rng));
  params_.add("gat.a_dst", glorot(h, hd, rng));

  for (const char* gate : {"z", "r", "h"}) {
    params_.add(fmt::format("gru.w{}", gate), glorot(2 * d, d, rng));
    params_.add(fmt::format("gru.b{}", gate), Tensor::matrix(1, d));
  }
  for (const char* ln : {"ln_hidden", "ln_out"}) {
    params_.add(fmt::format("{}.gain", ln), Tensor::matrix(1, d, 1.0));
    params_.add(fmt::format("{}.bias", ln), Tensor::matrix(1, d));
  }

  params_.add("out.projection", glorot(d, h * c, rng));
  params_.add("out.a_src", glorot(h, c, rng));
  params_.add("out.a_dst", glorot(h, c, rng));
}

Var GruGatModel::leaf(ad::Tape& tape, const std::string& name, bool track_grads) {
  ad::Parameter& p = params_.get(name);
  return track_grads ? tape.parameter(p) : tape.constant(p.value);
}

void GruGatModel::check_sample(const CascadeSample& sample, const EdgeIndex& edges) const {
  if (sample.labels.size() != edges.node_count) {
    fail(ErrorCategory::kShape, fmt::format("sample has {} labels but the line graph has {} nodes",
                                            sample.labels.size(), edges.node_count));
  }
  for (int g : sample.labels) {
    if (g < 0 || g >= config_.classes) {
      fail(ErrorCategory::kLabelOverflow,
           fmt::format("label {} does not fit {} classes", g, config_.classes));
    }
  }
}

Var GruGatModel::embed(ad::Tape& tape, const CascadeSample& sample, bool track_grads) {
  std::vector<std::size_t> rows(sample.labels.size());
  for (std::size_t u = 0; u < rows.size(); ++u) {
    const int g = sample.labels[u];
    if (g < 0 || g >= config_.classes) {
      fail(ErrorCategory::kLabelOverflow,
           fmt::format("label {} does not fit {} classes", g, config_.classes));
    }
    rows[u] = static_cast<std::size_t>(g);
  }
  return ad::embedding_lookup(leaf(tape, "embedding", track_grads), rows);
}

ForwardResult GruGatModel::forward(ad::Tape& tape, const CascadeSample& sample, const EdgeIndex& edges,
                                   bool track_grads) {
  check_sample(sample, edges);
  if (sample.max_iteration < 2) {
    fail(ErrorCategory::kInvalidSample,
         fmt::format("forward needs a propagating sample (G >= 2), got G = {}", sample.max_iteration));
  }
  const std::size_t heads = config_.heads;
  auto p = [&](const char* name) { return leaf(tape, name, track_grads); };
  const GatWeights hidden_gat{p("gat.projection"), p("gat.a_src"), p("gat.a_dst")};
  const GruWeights gru{p("gru.wz"), p("gru.bz"), p("gru.wr"), p("gru.br"), p("gru.wh"), p("gru.bh")};
  const Var ln_hidden_gain = p("ln_hidden.gain");
  const Var ln_hidden_bias = p("ln_hidden.bias");
  const Var ln_out_gain = p("ln_out.gain");
  const Var ln_out_bias = p("ln_out.bias");
  const GatWeights out_gat{p("out.projection"), p("out.a_src"), p("out.a_dst")};

  ForwardResult result;
  result.trace.heads = config_.heads;
  Var h = embed(tape, sample, track_grads);
  result.trace.hidden.push_back(h.value());
  for (int step = 1; step < sample.max_iteration; ++step) {
    const GatOutput msg = gat_layer(ad::layer_norm(h, ln_hidden_gain, ln_hidden_bias), edges, hidden_gat, heads);
    const GruOutput next = gru_gate(h, ad::elu(msg.features), gru);
    h = next.h;
    result.trace.alpha.push_back(msg.alpha.value());
    result.trace.candidate.push_back(next.candidate.value());
    result.trace.hidden.push_back(h.value());
  }
  const GatOutput out = gat_layer(ad::layer_norm(h, ln_out_gain, ln_out_bias), edges, out_gat, heads);
  result.logits = ad::head_mean(out.features, heads);
  return result;
}

double GruGatModel::accumulate_gradients(const CascadeSample& sample, const EdgeIndex& edges) {
  ad::Tape tape;
  const ForwardResult r = forward(tape, sample, edges, true);
  const Var loss = ad::cross_entropy_with_logits(r.logits, sample.labels);
  tape.backward(loss);
  return loss.value()[0];
}

double GruGatModel::loss(const CascadeSample& sample, const EdgeIndex& edges) {
  ad::Tape tape;
  const ForwardResult r = forward(tape, sample, edges, false);
  return ad::cross_entropy_with_logits(r.logits, sample.labels).value()[0];
}

std::vector<int> GruGatModel::predict(const CascadeSample& sample, const EdgeIndex& edges) {
  ad::Tape tape;
  const ForwardResult r = forward(tape, sample, edges, false);
  const Tensor& logits = r.logits.value();
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* row = logits.data() + i * logits.cols();
    out[i] = static_cast<int>(std::max_element(row, row + logits.cols()) - row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

double warm_restart_lr(const ModelConfig& c, double epoch) {
  double period = c.scheduler_t0;
  double t = epoch;
  if (c.scheduler_tmult == 1) {
    t = std::fmod(t, period);
  } else {
    while (t >= period) {
      t -= period;
      period *= c.scheduler_tmult;
    }
  }
  return c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

namespace {

const EdgeIndex& edges_for(const LineGraphIndex& graphs, const CascadeSample& s) {
  auto it = graphs.find(s.grid_name);
  if (it == graphs.end()) {
    fail(ErrorCategory::kMissingArtifact, fmt::format("no line graph for grid '{}'", s.grid_name));
  }
  return it->second;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

TrainingHistory train(GruGatModel& model, const Dataset& dataset, const LineGraphIndex& graphs,
                      const EpochCallback& on_epoch) {
  const ModelConfig& cfg = model.config();
  if (dataset.samples.empty()) fail(ErrorCategory::kDataset, "cannot train on an empty dataset");
  if (dataset.role != DatasetRole::kTraining) fail(ErrorCategory::kDataset, "dataset is not a training dataset");

  // Validation split, stratified by grid.
  std::vector<std::string> grid_order;
  std::map<std::string, std::vector<std::size_t>> by_grid;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& name = dataset.samples[i].grid_name;
    if (!by_grid.contains(name)) grid_order.push_back(name);
    by_grid[name].push_back(i);
  }
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  Rng split_rng(derive_seed(cfg.seed, "validation-split"));
  for (const auto& name : grid_order) {
    auto idx = by_grid[name];
    shuffle(idx, split_rng);
    std::size_t n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(idx.size()));
    if (n_val == 0 && cfg.validation_fraction > 0.0 && idx.size() >= 2) n_val = 1;
    val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  for (const auto& s : dataset.samples) edges_for(graphs, s);

  TrainingHistory history;
  history.train_count = train_idx.size();
  history.validation_count = val_idx.size();

  ad::ParameterSet& params = model.params();
  std::vector<Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& name : params.names()) best.push_back(params.get(name).value);
  };
  params.zero_grad();
  snapshot();
  history.best_validation_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  ad::AdamOptions adam{cfg.lr};
  const double n_train = static_cast<double>(train_idx.size());

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    Rng order_rng(derive_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
    shuffle(train_idx, order_rng);
    double total = 0.0;
    int pending = 0;
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
      const CascadeSample& s = dataset.samples[train_idx[i]];
      total += model.accumulate_gradients(s, edges_for(graphs, s));
      ++pending;
      if (pending == cfg.accumulation_steps || i + 1 == train_idx.size()) {
        adam.lr = warm_restart_lr(cfg, epoch + static_cast<double>(i + 1) / n_train);
        ad::adam_step(params, adam);
        ++rec.optimizer_steps;
        pending = 0;
      }
    }
    rec.train_loss = total / n_train;
    rec.lr_end = adam.lr;
    if (val_idx.empty()) {
      rec.validation_loss = rec.train_loss;
    } else {
      double v = 0.0;
      for (std::size_t i : val_idx) {
        const CascadeSample& s = dataset.samples[i];
        v += model.loss(s, edges_for(graphs, s));
      }
      rec.validation_loss = v / static_cast<double>(val_idx.size());
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation_loss < history.best_validation_loss) {
      history.best_validation_loss = rec.validation_loss;
      history.best_epoch = rec.epoch;
      snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      history.early_stopped = true;
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) params.get(params.names()[i]).value = best[i];
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'C', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const char> data) : data_(data) {}
  template <class T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > data_.size()) fail(ErrorCategory::kCheckpoint, "checkpoint truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const char> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const char> bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j = {
      {"hidden_dim", c.hidden_dim},
      {"heads", c.heads},
      {"classes", c.classes},
      {"lr", c.lr},
      {"accumulation_steps", c.accumulation_steps},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"scheduler_t0", c.scheduler_t0},
      {"scheduler_tmult", c.scheduler_tmult},
      {"lr_min", c.lr_min},
      {"validation_fraction", c.validation_fraction},
      {"seed", c.seed},
  };
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.classes = j.at("classes").get<int>();
    c.lr = j.at("lr").get<double>();
    c.accumulation_steps = j.at("accumulation_steps").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.scheduler_t0 = j.at("scheduler_t0").get<int>();
    c.scheduler_tmult = j.at("scheduler_tmult").get<int>();
    c.lr_min = j.at("lr_min").get<double>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kCheckpoint, fmt::format("bad checkpoint config: {}", e.what()));
  }
  return c;
}

void save_checkpoint(const GruGatModel& model, const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kFormatVersion);
  const std::string cfg = config_to_json(model.config());
  w.put(static_cast<std::uint64_t>(cfg.size()));
  w.put_bytes(cfg.data(), cfg.size());
  const auto& params = model.params();
  w.put(static_cast<std::uint32_t>(params.names().size()));
  for (const auto& name : params.names()) {
    const Tensor& t = params.get(name).value;
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t dim : t.shape()) w.put(static_cast<std::uint64_t>(dim));
    w.put_bytes(t.data(), t.size() * sizeof(double));
  }
  w.put(crc(w.buffer()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) fail(ErrorCategory::kCheckpoint, fmt::format("failed writing {}", path.string()));
}

GruGatModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("checkpoint not found: {}", path.string()));
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorCategory::kCheckpoint, fmt::format("{}: not a checkpoint file", path.string()));
  }
  const std::span<const char> body(bytes.data(), bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc(body) != stored) {
    fail(ErrorCategory::kCheckpoint, fmt::format("{}: checksum mismatch (truncated or corrupt)", path.string()));
  }
  Reader r(body);
  char magic[sizeof kMagic];
  r.get_bytes(magic, sizeof magic);
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    fail(ErrorCategory::kCheckpoint,
         fmt::format("checkpoint format version {} unsupported (expected {})", version, kFormatVersion));
  }
  std::string cfg(r.get<std::uint64_t>(), '\0');
  r.get_bytes(cfg.data(), cfg.size());
  GruGatModel model(config_from_json(cfg));
  const auto count = r.get<std::uint32_t>();
  if (count != model.params().names().size()) {
    fail(ErrorCategory::kCheckpoint, fmt::format("checkpoint holds {} tensors, model expects {}", count,
                                                 model.params().names().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.get_bytes(name.data(), name.size());
    std::vector<std::size_t> shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (!model.params().contains(name)) {
      fail(ErrorCategory::kCheckpoint, fmt::format("unexpected tensor '{}'", name));
    }
    Tensor& dst = model.params().get(name).value;
    if (dst.shape() != shape) {
      fail(ErrorCategory::kCheckpoint, fmt::format("tensor '{}' has shape mismatch", name));
    }
    r.get_bytes(dst.data(), dst.size() * sizeof(double));
  }
  if (r.position() != body.size()) fail(ErrorCategory::kCheckpoint, "trailing bytes in checkpoint");
  return model;
}

GruGatModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  GruGatModel model = load_checkpoint(path);
  const ModelConfig& got = model.config();
  if (!got.same_architecture(expected)) {
    fail(ErrorCategory::kCheckpoint,
         fmt::format("config mismatch: checkpoint has hidden_dim={} heads={} classes={}, expected "
                     "hidden_dim={} heads={} classes={}",
                     got.hidden_dim, got.heads, got.classes, expected.hidden_dim, expected.heads,
                     expected.classes));
  }
  return model;
}

}  // namespace gridcascade
