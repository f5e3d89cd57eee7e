#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gridcascade/autodiff.hpp"
#include "gridcascade/cascade.hpp"
#include "gridcascade/grid.hpp"

namespace gridcascade {

struct ModelConfig {
  int hidden_dim = 256;
  int heads = 4;
  int classes = 100;
  double lr = 5e-5;
  int accumulation_steps = 4;
  int max_epochs = 20;
  int patience = 10;
  int scheduler_t0 = 1;     // epochs in the first annealing cycle
  int scheduler_tmult = 2;  // cycle length multiplier after each restart
  double lr_min = 0.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  int head_dim() const { return hidden_dim / heads; }
  /// Throws kConfig on an inconsistent configuration.
  void validate() const;
  bool same_architecture(const ModelConfig& o) const {
    return hidden_dim == o.hidden_dim && heads == o.heads && classes == o.classes;
  }
};

/// Per-step record of a forward pass. `alpha[t]` is edges x heads with edge
/// order of the line graph; `hidden[0]` is the embedding and `hidden[t]` the
/// GRU output of step t (1-based); `candidate[t-1]` is that step's h~.
struct ForwardTrace {
  std::vector<ad::Tensor> hidden;
  std::vector<ad::Tensor> candidate;
  std::vector<ad::Tensor> alpha;
  int heads = 0;

  std::size_t step_count() const noexcept { return alpha.size(); }
  /// Head-averaged coefficient of `edge` at hidden step t (0-based).
  double mean_alpha(std::size_t t, std::size_t edge) const;
};

/// Edge index arrays of a line graph in the form the layers consume.
struct EdgeIndex {
  std::size_t node_count = 0;
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;

  explicit EdgeIndex(const LineGraph& lg);
};

/// Multi-head graph attention with per-head projections and attention
/// vectors. The projection is stored input x (heads*out) with head k in column
/// block k; the attention vector of head k is split into its source half
/// (`a_src` row k) and target half (`a_dst` row k).
struct GatWeights {
  ad::Var projection;
  ad::Var a_src;
  ad::Var a_dst;
};

struct GatOutput {
  ad::Var features;  // n x heads*out (concatenated heads)
  ad::Var alpha;     // edges x heads
};

GatOutput gat_layer(ad::Var h, const EdgeIndex& edges, const GatWeights& w, std::size_t heads);

struct GruWeights {
  ad::Var wz, bz, wr, br, wh, bh;  // w*: 2D x D, b*: 1 x D
};

struct GruOutput {
  ad::Var h;
  ad::Var candidate;
  ad::Var update_gate;
};

GruOutput gru_gate(ad::Var h_prev, ad::Var h_new, const GruWeights& w);

struct ForwardResult {
  ad::Var logits;  // lines x classes
  ForwardTrace trace;
};

/// GRU-gated graph attention network over line graphs. One parameter set is
/// shared by every recurrent step and by every grid.
class GruGatModel {
 public:
  explicit GruGatModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  ad::ParameterSet& params() noexcept { return params_; }
  const ad::ParameterSet& params() const noexcept { return params_; }

  /// Rows of the embedding table for each line's label.
  ad::Var embed(ad::Tape& tape, const CascadeSample& sample, bool track_grads = false);

  /// Runs G-1 hidden steps and the output layer. With `track_grads` the
  /// parameters are tape leaves and `tape.backward` fills their gradients.
  ForwardResult forward(ad::Tape& tape, const CascadeSample& sample, const EdgeIndex& edges,
                        bool track_grads = false);

  /// Summed cross-entropy of the reconstruction; accumulates gradients.
  double accumulate_gradients(const CascadeSample& sample, const EdgeIndex& edges);
  double loss(const CascadeSample& sample, const EdgeIndex& edges);
  /// Argmax class per line.
  std::vector<int> predict(const CascadeSample& sample, const EdgeIndex& edges);

 private:
  ad::Var leaf(ad::Tape& tape, const std::string& name, bool track_grads);
  void check_sample(const CascadeSample& sample, const EdgeIndex& edges) const;

  ModelConfig config_;
  ad::ParameterSet params_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;       // mean per sample
  double validation_loss = 0.0;  // mean per sample
  double lr_end = 0.0;
  std::size_t optimizer_steps = 0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  bool early_stopped = false;
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
};

/// Cosine annealing with warm restarts at fractional epoch `epoch`.
double warm_restart_lr(const ModelConfig& config, double epoch);

/// Keyed by grid name.
using LineGraphIndex = std::map<std::string, EdgeIndex>;

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainingHistory train(GruGatModel& model, const Dataset& dataset, const LineGraphIndex& graphs,
                      const EpochCallback& on_epoch = {});

/// Versioned binary container: magic, version, config JSON, named
/// little-endian float64 tensors, CRC-32.
void save_checkpoint(const GruGatModel& model, const std::filesystem::path& path);
GruGatModel load_checkpoint(const std::filesystem::path& path);
/// Also rejects a checkpoint whose architecture differs from `expected`.
GruGatModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const std::string& text);

}  // namespace gridcascade
