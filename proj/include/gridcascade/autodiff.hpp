#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gridcascade::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major tensor of doubles. Rank 1 and 2 are what the model needs;
/// rank-1 tensors of length n behave as 1 x n matrices in matrix views.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.size() < 2 ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  void fill(double v);
  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;

  explicit Parameter(Tensor v);
};

/// Named parameters in insertion order, plus the optimizer step count.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::span<const std::string> names() const noexcept { return names_; }
  std::size_t scalar_count() const;
  std::uint64_t step_count() const noexcept { return steps_; }
  void set_step_count(std::uint64_t s) noexcept { steps_ = s; }

  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::map<std::string, Parameter> params_;
  std::uint64_t steps_ = 0;
};

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter; gradients are zeroed.
void adam_step(ParameterSet& params, const AdamOptions& opt);

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
};

/// Records operations in creation order, which is a topological order, and
/// replays their local derivatives in reverse. Single-threaded.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; backward adds into `p.grad`.
  Var parameter(Parameter& p);

  /// Records a derived node. `inputs` decide whether it needs a gradient.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  /// Reverse sweep from a scalar loss. Parameter gradients accumulate (+=).
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of a node; allocated on first use.
  Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// --- primitives -------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);  // b may be 1 x cols (row broadcast)
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // b may be rows x 1 (column broadcast)
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var concat(std::initializer_list<Var> parts);  // along columns
Var slice(Var a, std::size_t col_begin, std::size_t col_end);
Var leaky_relu(Var a, double negative_slope = 0.2);
Var elu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var sum(Var a);  // -> 1 x 1
/// Per-row normalization with gain and bias of shape 1 x cols.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Rows of `table` selected by `indices`; also serves as a row gather.
Var embedding_lookup(Var table, std::span<const std::size_t> indices);
Var gather_rows(Var a, std::span<const std::size_t> indices);
/// Softmax over the rows sharing a segment id, independently per column.
Var segment_softmax(Var values, std::span<const std::size_t> segments, std::size_t n_segments);
Var segment_sum(Var values, std::span<const std::size_t> segments, std::size_t n_segments);
/// Sum over rows of -log softmax(logits)[label].
Var cross_entropy_with_logits(Var logits, std::span<const int> labels);

/// x (n x heads*d), a (heads x d) -> n x heads with out[i,k] = <x[i, k-block], a[k]>.
Var head_dot(Var x, Var a);
/// x (n x heads*d), w (n x heads) -> x with every k-block of row i scaled by w[i,k].
Var head_scale(Var x, Var w, std::size_t heads);
/// Attention-weighted message passing without materializing per-edge
/// messages: out[dst[e], k-block] += alpha[e, k] * x[src[e], k-block].
/// Same value as segment_sum(head_scale(gather_rows(x, src), alpha), dst).
Var attend(Var x, Var alpha, std::span<const std::size_t> src, std::span<const std::size_t> dst,
           std::size_t n_out, std::size_t heads);
/// x (n x heads*d) -> n x d average of the head blocks.
Var head_mean(Var x, std::size_t heads);

}  // namespace gridcascade::ad
