#include "gridcascade/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "gridcascade/errors.hpp"

namespace gridcascade::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail(ErrorCategory::kShape,
       fmt::format("{}: incompatible shapes {} and {}", op, a.shape_string(), b.shape_string()));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.shape().size() != 2) {
    fail(ErrorCategory::kShape, fmt::format("{}: expected a matrix, got {}", op, t.shape_string()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != product(shape_)) {
    fail(ErrorCategory::kShape,
         fmt::format("tensor of shape {} given {} values", shape_string(), data_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const { return fmt::format("[{}]", fmt::join(shape_, "x")); }

Parameter::Parameter(Tensor v)
    : value(std::move(v)),
      grad(value.shape()),
      first_moment(value.shape()),
      second_moment(value.shape()) {}

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.try_emplace(name, std::move(init));
  if (!inserted) fail(ErrorCategory::kShape, fmt::format("duplicate parameter '{}'", name));
  names_.push_back(name);
  return it->second;
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCategory::kShape, fmt::format("unknown parameter '{}'", name));
  return it->second;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCategory::kShape, fmt::format("unknown parameter '{}'", name));
  return it->second;
}

bool ParameterSet::contains(const std::string& name) const { return params_.contains(name); }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

void adam_step(ParameterSet& params, const AdamOptions& opt) {
  params.set_step_count(params.step_count() + 1);
  const double t = static_cast<double>(params.step_count());
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (const auto& name : params.names()) {
    Parameter& p = params.get(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      double& m = p.first_moment[i];
      double& v = p.second_moment[i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      p.value[i] -= opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
    }
    p.grad.fill(0.0);
  }
}

// --- tape -------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  return {this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
  for (double x : value.values()) {
    if (!std::isfinite(x)) fail(ErrorCategory::kNumeric, fmt::format("{}: non-finite value", op));
  }
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) fail(ErrorCategory::kShape, fmt::format("{}: input from another tape", op));
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) fail(ErrorCategory::kShape, "backward: loss from another tape");
  if (nodes_[loss.id].value.size() != 1) {
    fail(ErrorCategory::kShape,
         fmt::format("backward: loss must be scalar, got {}", nodes_[loss.id].value.shape_string()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto dst = n.param->grad.values();
      auto src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

// --- primitives -------------------------------------------------------------

namespace {

/// Adds `g` into the gradient of input `v` if it needs one.
template <class F>
void accumulate(Tape& t, Var v, F&& fn) {
  if (t.requires_grad(v.id)) fn(t.grad(v.id));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_matrix("matmul", x);
  require_matrix("matmul", y);
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  out.mat().noalias() = x.mat() * y.mat();
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat().noalias() += g.mat() * b.value().mat().transpose(); });
    accumulate(t, b, [&](Tensor& gb) { gb.mat().noalias() += a.value().mat().transpose() * g.mat(); });
  });
}

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool row_bcast = !x.same_shape(y);
  if (row_bcast && !(y.rows() == 1 && y.cols() == x.cols() && x.shape().size() == 2)) {
    shape_error("add", x, y);
  }
  Tensor out = x;
  if (row_bcast) {
    out.mat().rowwise() += y.mat().row(0);
  } else {
    out.mat() += y.mat();
  }
  return a.tape->record("add", std::move(out), {a, b}, [a, b, row_bcast](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat() += g.mat(); });
    accumulate(t, b, [&](Tensor& gb) {
      if (row_bcast) {
        gb.mat().row(0) += g.mat().colwise().sum();
      } else {
        gb.mat() += g.mat();
      }
    });
  });
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) shape_error("sub", x, y);
  Tensor out = x;
  out.mat() -= y.mat();
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat() += g.mat(); });
    accumulate(t, b, [&](Tensor& gb) { gb.mat() -= g.mat(); });
  });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool col_bcast = !x.same_shape(y);
  if (col_bcast && !(y.cols() == 1 && y.rows() == x.rows() && x.shape().size() == 2)) {
    shape_error("mul", x, y);
  }
  Tensor out = x;
  if (col_bcast) {
    out.mat().array().colwise() *= y.mat().col(0).array();
  } else {
    out.mat().array() *= y.mat().array();
  }
  return a.tape->record("mul", std::move(out), {a, b}, [a, b, col_bcast](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = a.value();
    const Tensor& yv = b.value();
    accumulate(t, a, [&](Tensor& ga) {
      if (col_bcast) {
        ga.mat().array() += g.mat().array().colwise() * yv.mat().col(0).array();
      } else {
        ga.mat().array() += g.mat().array() * yv.mat().array();
      }
    });
    accumulate(t, b, [&](Tensor& gb) {
      if (col_bcast) {
        gb.mat().col(0).array() += (g.mat().array() * xv.mat().array()).rowwise().sum();
      } else {
        gb.mat().array() += g.mat().array() * xv.mat().array();
      }
    });
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  out.mat() *= c;
  return a.tape->record("scale", std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat() += c * g.mat(); });
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  out.mat().array() += c;
  return a.tape->record("add_scalar", std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat() += g.mat(); });
  });
}

Var concat(std::initializer_list<Var> parts) {
  if (parts.size() == 0) fail(ErrorCategory::kShape, "concat: no inputs");
  const std::vector<Var> ins(parts);
  const std::size_t rows = ins.front().value().rows();
  std::size_t cols = 0;
  for (const Var& v : ins) {
    require_matrix("concat", v.value());
    if (v.value().rows() != rows) shape_error("concat", ins.front().value(), v.value());
    cols += v.value().cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& v : ins) {
    out.mat().middleCols(offset, v.value().cols()) = v.value().mat();
    offset += v.value().cols();
  }
  Tape* tape = ins.front().tape;
  return tape->record("concat", std::move(out), std::span<const Var>(ins), [ins](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& v : ins) {
      const std::size_t c = v.value().cols();
      accumulate(t, v, [&](Tensor& gv) { gv.mat() += g.mat().middleCols(off, c); });
      off += c;
    }
  });
}

Var slice(Var a, std::size_t col_begin, std::size_t col_end) {
  const Tensor& x = a.value();
  require_matrix("slice", x);
  if (col_begin > col_end || col_end > x.cols()) {
    fail(ErrorCategory::kShape,
         fmt::format("slice: columns [{}, {}) out of range for {}", col_begin, col_end, x.shape_string()));
  }
  const std::size_t w = col_end - col_begin;
  Tensor out = Tensor::matrix(x.rows(), w);
  out.mat() = x.mat().middleCols(col_begin, w);
  return a.tape->record("slice", std::move(out), {a}, [a, col_begin, w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) { ga.mat().middleCols(col_begin, w) += g.mat(); });
  });
}

namespace {

template <class F, class D>
Var unary(const char* op, Var a, F f, D df) {
  Tensor out = a.value();
  for (double& v : out.values()) v = f(v);
  return a.tape->record(op, std::move(out), {a}, [a, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = a.value();
    const Tensor& y = t.value(self);
    accumulate(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  });
}

}  // namespace

Var leaky_relu(Var a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var elu(Var a) {
  return unary(
      "elu", a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(Var a) {
  const double s = a.value().mat().sum();
  return a.tape->record("sum", Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    accumulate(t, a, [&](Tensor& ga) { ga.mat().array() += g; });
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  require_matrix("layer_norm", xv);
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    shape_error("layer_norm", xv, gain.value());
  }
  // Cache normalized rows and inverse std for the backward pass.
  auto xhat = std::make_shared<Tensor>(Tensor::matrix(n, d));
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out = Tensor::matrix(n, d);
  const double* gv = gain.value().data();
  const double* bv = bias.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat->at(i, j) = h;
      out.at(i, j) = h * gv[j] + bv[j];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, n, d](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const double* gv = gain.value().data();
        accumulate(t, gain, [&](Tensor& gg) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g.at(i, j) * xhat->at(i, j);
        });
        accumulate(t, bias, [&](Tensor& gb) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
        });
        accumulate(t, x, [&](Tensor& gx) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double s1 = 0.0;
            double s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g.at(i, j) * gv[j];
              s1 += dh;
              s2 += dh * xhat->at(i, j);
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g.at(i, j) * gv[j];
              gx.at(i, j) += (*inv_std)[i] * (dh - inv_d * s1 - xhat->at(i, j) * inv_d * s2);
            }
          }
        });
      });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Tensor& x = a.value();
  require_matrix("gather_rows", x);
  const std::size_t d = x.cols();
  Tensor out = Tensor::matrix(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      fail(ErrorCategory::kShape,
           fmt::format("gather_rows: index {} out of range for {}", indices[i], x.shape_string()));
    }
    std::copy_n(x.data() + indices[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape->record("gather_rows", std::move(out), {a}, [a, idx = std::move(idx), d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = ga.data() + idx[i] * d;
        const double* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  });
}

Var embedding_lookup(Var table, std::span<const std::size_t> indices) {
  return gather_rows(table, indices);
}

Var segment_softmax(Var values, std::span<const std::size_t> segments, std::size_t n_segments) {
  const Tensor& x = values.value();
  require_matrix("segment_softmax", x);
  if (segments.size() != x.rows()) {
    fail(ErrorCategory::kShape, fmt::format("segment_softmax: {} segment ids for {} rows",
                                            segments.size(), x.rows()));
  }
  const std::size_t h = x.cols();
  std::vector<double> maxv(n_segments * h, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < x.rows(); ++e) {
    if (segments[e] >= n_segments) fail(ErrorCategory::kShape, "segment_softmax: segment id out of range");
    for (std::size_t k = 0; k < h; ++k) {
      maxv[segments[e] * h + k] = std::max(maxv[segments[e] * h + k], x.at(e, k));
    }
  }
  Tensor out = Tensor::matrix(x.rows(), h);
  std::vector<double> denom(n_segments * h, 0.0);
  for (std::size_t e = 0; e < x.rows(); ++e) {
    for (std::size_t k = 0; k < h; ++k) {
      const double ex = std::exp(x.at(e, k) - maxv[segments[e] * h + k]);
      out.at(e, k) = ex;
      denom[segments[e] * h + k] += ex;
    }
  }
  for (std::size_t e = 0; e < x.rows(); ++e) {
    for (std::size_t k = 0; k < h; ++k) out.at(e, k) /= denom[segments[e] * h + k];
  }
  std::vector<std::size_t> seg(segments.begin(), segments.end());
  return values.tape->record(
      "segment_softmax", std::move(out), {values},
      [values, seg = std::move(seg), n_segments, h](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        std::vector<double> dot(n_segments * h, 0.0);
        for (std::size_t e = 0; e < seg.size(); ++e)
          for (std::size_t k = 0; k < h; ++k) dot[seg[e] * h + k] += g.at(e, k) * y.at(e, k);
        accumulate(t, values, [&](Tensor& gx) {
          for (std::size_t e = 0; e < seg.size(); ++e)
            for (std::size_t k = 0; k < h; ++k)
              gx.at(e, k) += y.at(e, k) * (g.at(e, k) - dot[seg[e] * h + k]);
        });
      });
}

Var segment_sum(Var values, std::span<const std::size_t> segments, std::size_t n_segments) {
  const Tensor& x = values.value();
  require_matrix("segment_sum", x);
  if (segments.size() != x.rows()) {
    fail(ErrorCategory::kShape,
         fmt::format("segment_sum: {} segment ids for {} rows", segments.size(), x.rows()));
  }
  const std::size_t d = x.cols();
  Tensor out = Tensor::matrix(n_segments, d);
  for (std::size_t e = 0; e < x.rows(); ++e) {
    if (segments[e] >= n_segments) fail(ErrorCategory::kShape, "segment_sum: segment id out of range");
    double* dst = out.data() + segments[e] * d;
    const double* src = x.data() + e * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  std::vector<std::size_t> seg(segments.begin(), segments.end());
  return values.tape->record("segment_sum", std::move(out), {values},
                             [values, seg = std::move(seg), d](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               accumulate(t, values, [&](Tensor& gx) {
                                 for (std::size_t e = 0; e < seg.size(); ++e) {
                                   double* dst = gx.data() + e * d;
                                   const double* src = g.data() + seg[e] * d;
                                   for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                 }
                               });
                             });
}

Var cross_entropy_with_logits(Var logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  require_matrix("cross_entropy_with_logits", x);
  if (labels.size() != x.rows()) {
    fail(ErrorCategory::kShape, fmt::format("cross_entropy_with_logits: {} labels for {} rows",
                                            labels.size(), x.rows()));
  }
  const std::size_t c = x.cols();
  auto probs = std::make_shared<Tensor>(Tensor::matrix(x.rows(), c));
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      fail(ErrorCategory::kLabelOverflow,
           fmt::format("cross_entropy_with_logits: label {} outside {} classes", labels[i], c));
    }
    const double* row = x.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < c; ++j) probs->at(i, j) = std::exp(row[j] - m) / z;
    loss += std::log(z) + m - row[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record("cross_entropy_with_logits", Tensor::scalar(loss), {logits},
                             [logits, probs, lab = std::move(lab), c](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0];
                               accumulate(t, logits, [&](Tensor& gx) {
                                 for (std::size_t i = 0; i < lab.size(); ++i) {
                                   for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g * probs->at(i, j);
                                   gx.at(i, static_cast<std::size_t>(lab[i])) -= g;
                                 }
                               });
                             });
}

Var head_dot(Var x, Var a) {
  const Tensor& xv = x.value();
  const Tensor& av = a.value();
  require_matrix("head_dot", xv);
  require_matrix("head_dot", av);
  const std::size_t heads = av.rows();
  const std::size_t d = av.cols();
  if (xv.cols() != heads * d) shape_error("head_dot", xv, av);
  const std::size_t n = xv.rows();
  Tensor out = Tensor::matrix(n, heads);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < heads; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += xv.at(i, k * d + j) * av.at(k, j);
      out.at(i, k) = s;
    }
  return x.tape->record("head_dot", std::move(out), {x, a}, [x, a, n, heads, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, x, [&](Tensor& gx) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < heads; ++k)
          for (std::size_t j = 0; j < d; ++j) gx.at(i, k * d + j) += g.at(i, k) * av.at(k, j);
    });
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < heads; ++k)
          for (std::size_t j = 0; j < d; ++j) ga.at(k, j) += g.at(i, k) * xv.at(i, k * d + j);
    });
  });
}

Var head_scale(Var x, Var w, std::size_t heads) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_matrix("head_scale", xv);
  if (heads == 0 || wv.rows() != xv.rows() || wv.cols() != heads || xv.cols() % heads != 0) {
    shape_error("head_scale", xv, wv);
  }
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols() / heads;
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < heads; ++k)
      for (std::size_t j = 0; j < d; ++j) out.at(i, k * d + j) *= wv.at(i, k);
  return x.tape->record("head_scale", std::move(out), {x, w}, [x, w, n, heads, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, x, [&](Tensor& gx) {
      const Tensor& wv = w.value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < heads; ++k)
          for (std::size_t j = 0; j < d; ++j) gx.at(i, k * d + j) += g.at(i, k * d + j) * wv.at(i, k);
    });
    accumulate(t, w, [&](Tensor& gw) {
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < heads; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += g.at(i, k * d + j) * xv.at(i, k * d + j);
          gw.at(i, k) += s;
        }
    });
  });
}

Var head_mean(Var x, std::size_t heads) {
  const Tensor& xv = x.value();
  require_matrix("head_mean", xv);
  if (heads == 0 || xv.cols() % heads != 0) {
    fail(ErrorCategory::kShape, fmt::format("head_mean: {} columns not divisible by {} heads",
                                            xv.cols(), heads));
  }
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols() / heads;
  const double inv = 1.0 / static_cast<double>(heads);
  Tensor out = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < heads; ++k)
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) += inv * xv.at(i, k * d + j);
  return x.tape->record("head_mean", std::move(out), {x}, [x, n, heads, d, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < heads; ++k)
          for (std::size_t j = 0; j < d; ++j) gx.at(i, k * d + j) += inv * g.at(i, j);
    });
  });
}

Var attend(Var x, Var alpha, std::span<const std::size_t> src, std::span<const std::size_t> dst,
           std::size_t n_out, std::size_t heads) {
  const Tensor& xv = x.value();
  const Tensor& av = alpha.value();
  require_matrix("attend", xv);
  require_matrix("attend", av);
  const std::size_t edges = src.size();
  if (heads == 0 || xv.cols() % heads != 0 || av.cols() != heads || av.rows() != edges ||
      dst.size() != edges) {
    shape_error("attend", xv, av);
  }
  const std::size_t d = xv.cols() / heads;
  const std::size_t width = xv.cols();
  for (std::size_t e = 0; e < edges; ++e) {
    if (src[e] >= xv.rows() || dst[e] >= n_out) fail(ErrorCategory::kShape, "attend: edge index out of range");
  }
  Tensor out = Tensor::matrix(n_out, width);
  for (std::size_t e = 0; e < edges; ++e) {
    const double* xs = xv.data() + src[e] * width;
    double* o = out.data() + dst[e] * width;
    for (std::size_t k = 0; k < heads; ++k) {
      const double a = av[e * heads + k];
      for (std::size_t j = k * d; j < (k + 1) * d; ++j) o[j] += a * xs[j];
    }
  }
  std::vector<std::size_t> s(src.begin(), src.end());
  std::vector<std::size_t> t(dst.begin(), dst.end());
  return x.tape->record("attend", std::move(out), {x, alpha},
                        [x, alpha, s = std::move(s), t = std::move(t), heads, d, width](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    accumulate(tp, x, [&](Tensor& gx) {
      const Tensor& av = alpha.value();
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* ge = g.data() + t[e] * width;
        double* dx = gx.data() + s[e] * width;
        for (std::size_t k = 0; k < heads; ++k) {
          const double a = av[e * heads + k];
          for (std::size_t j = k * d; j < (k + 1) * d; ++j) dx[j] += a * ge[j];
        }
      }
    });
    accumulate(tp, alpha, [&](Tensor& ga) {
      const Tensor& xv = x.value();
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* ge = g.data() + t[e] * width;
        const double* xs = xv.data() + s[e] * width;
        for (std::size_t k = 0; k < heads; ++k) {
          double acc = 0.0;
          for (std::size_t j = k * d; j < (k + 1) * d; ++j) acc += ge[j] * xs[j];
          ga[e * heads + k] += acc;
        }
      }
    });
  });
}

}  // namespace gridcascade::ad
