#include "gsnf/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

namespace gsnf {

namespace {

thread_local Tape* g_tape = nullptr;

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

Tensor like(const Tensor& a) {
  Tensor out;
  out.shape = a.shape;
  out.data = std::make_shared<std::vector<double>>(a.size());
  return out;
}

Tensor with_shape(std::vector<std::size_t> shape) {
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::make_shared<std::vector<double>>(shape_size(out.shape));
  return out;
}

// Records the op on the active tape when any input is tracked.
void track(Tensor& out, std::vector<int> parents, Tape::Pull pull) {
  Tape* t = g_tape;
  if (!t || !t->active()) return;
  bool any = false;
  for (int p : parents) any = any || p >= 0;
  if (!any) return;
  out.node = t->record(out.size(), std::move(parents), std::move(pull));
}

void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Elementwise unary op with local derivative computed from input and output.
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = fwd((*a.data)[i]);
  check_finite(out, name);
  track(out, {a.node}, [a, out, bwd](Tape& t, int self) {
    if (a.node < 0) return;
    const auto& g = t.grad_buf(self);
    auto& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * bwd((*a.data)[i], (*out.data)[i]);
  });
  return out;
}

}  // namespace

double Tensor::value() const {
  if (size() != 1) throw DimensionError("Tensor::value: tensor is not scalar");
  return (*data)[0];
}

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    throw DimensionError("make_tensor: shape/data size mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::make_shared<std::vector<double>>(std::move(values));
  return out;
}

Tensor scalar(double v) { return make_tensor({}, {v}); }

Tensor zeros(std::vector<std::size_t> shape) { return with_shape(std::move(shape)); }

Tensor full(std::vector<std::size_t> shape, double v) {
  Tensor out = with_shape(std::move(shape));
  std::fill(out.data->begin(), out.data->end(), v);
  return out;
}

Tensor from_matrix(const Matrix& m) {
  Tensor out = with_shape({(std::size_t)m.rows(), (std::size_t)m.cols()});
  out.map() = m;
  return out;
}

Tensor eye(std::size_t n) {
  Tensor out = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i * n + i] = 1.0;
  return out;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : *t.data)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + what);
}

// ---- Tape -----------------------------------------------------------------

int Tape::record(std::size_t out_size, std::vector<int> parents, Pull pull) {
  nodes_.push_back(Node{std::move(parents), std::move(pull), out_size});
  return (int)nodes_.size() - 1;
}

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  out.node = record(t.size(), {}, nullptr);
  return out;
}

std::vector<double>& Tape::grad_buf(int node) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& g = grads_[(std::size_t)node];
  if (g.empty()) g.assign(nodes_[(std::size_t)node].size, 0.0);
  return g;
}

void Tape::backward(const Tensor& root) {
  if (root.node < 0) throw UsageError("backward: root is not tracked");
  if (root.size() != 1) throw UsageError("backward: root must be scalar");
  if (!active_) throw UsageError("backward: tape already consumed");
  grads_.assign(nodes_.size(), {});
  grad_buf(root.node)[0] = 1.0;
  for (int i = root.node; i >= 0; --i) {
    if (grads_[(std::size_t)i].empty()) continue;
    if (nodes_[(std::size_t)i].pull) nodes_[(std::size_t)i].pull(*this, i);
  }
  active_ = false;
}

std::vector<double> Tape::grad(int node) const {
  if (node < 0 || (std::size_t)node >= nodes_.size())
    throw UsageError("Tape::grad: unknown node");
  if ((std::size_t)node < grads_.size() && !grads_[(std::size_t)node].empty())
    return grads_[(std::size_t)node];
  return std::vector<double>(nodes_[(std::size_t)node].size, 0.0);
}

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

Tape* active_tape() { return g_tape; }

// ---- arithmetic -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "add");
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  check_finite(out, "add");
  track(out, {a.node, b.node}, [a, b](Tape& t, int self) {
    const auto& g = t.grad_buf(self);
    if (a.node >= 0) axpy(t.grad_buf(a.node), g);
    if (b.node >= 0) axpy(t.grad_buf(b.node), g);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "sub");
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  check_finite(out, "sub");
  track(out, {a.node, b.node}, [a, b](Tape& t, int self) {
    const auto& g = t.grad_buf(self);
    if (a.node >= 0) axpy(t.grad_buf(a.node), g);
    if (b.node >= 0) {
      auto& gb = t.grad_buf(b.node);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "mul");
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  check_finite(out, "mul");
  track(out, {a.node, b.node}, [a, b](Tape& t, int self) {
    const auto& g = t.grad_buf(self);
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*b.data)[i];
    }
    if (b.node >= 0) {
      auto& gb = t.grad_buf(b.node);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*a.data)[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "div");
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    (*out.data)[i] = (*a.data)[i] / (*b.data)[i];
  check_finite(out, "div");
  track(out, {a.node, b.node}, [a, b](Tape& t, int self) {
    const auto& g = t.grad_buf(self);
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*b.data)[i];
    }
    if (b.node >= 0) {
      auto& gb = t.grad_buf(b.node);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double bv = (*b.data)[i];
        gb[i] -= g[i] * (*a.data)[i] / (bv * bv);
      }
    }
  });
  return out;
}

Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, "scale", [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar");
  const double sv = s.value();
  Tensor out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = sv * (*a.data)[i];
  check_finite(out, "scale_by");
  track(out, {a.node, s.node}, [a, s, sv](Tape& t, int self) {
    const auto& g = t.grad_buf(self);
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (s.node >= 0) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*a.data)[i];
      t.grad_buf(s.node)[0] += acc;
    }
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree (" +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + ")");
  Tensor out = with_shape({a.rows(), b.cols()});
  out.map().noalias() = a.map() * b.map();
  check_finite(out, "matmul");
  track(out, {a.node, b.node}, [a, b, out](Tape& t, int self) {
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)out.rows(), (Eigen::Index)out.cols());
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols()).noalias() +=
          g * b.map().transpose();
    }
    if (b.node >= 0) {
      auto& gb = t.grad_buf(b.node);
      MatMap(gb.data(), (Eigen::Index)b.rows(), (Eigen::Index)b.cols()).noalias() +=
          a.map().transpose() * g;
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = with_shape({a.cols(), a.rows()});
  out.map() = a.map().transpose();
  track(out, {a.node}, [a, out](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)out.rows(), (Eigen::Index)out.cols());
    auto& ga = t.grad_buf(a.node);
    MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols()) +=
        g.transpose();
  });
  return out;
}

// ---- structure ops ----------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: element count mismatch");
  Tensor out = with_shape(std::move(shape));
  *out.data = *a.data;  // row-major layout is shared across shapes
  track(out, {a.node}, [a](Tape& t, int self) {
    if (a.node < 0) return;
    auto& g = t.grad_buf(self);
    auto& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::size_t r = parts[0].rows(), c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
    c += p.cols();
  }
  Tensor out = with_shape({r, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    out.map().middleCols((Eigen::Index)off, (Eigen::Index)p.cols()) = p.map();
    off += p.cols();
  }
  std::vector<int> parents;
  for (const auto& p : parts) parents.push_back(p.node);
  track(out, parents, [parts, r, c](Tape& t, int self) {
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)r, (Eigen::Index)c);
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p.node >= 0) {
        auto& gp = t.grad_buf(p.node);
        MatMap(gp.data(), (Eigen::Index)p.rows(), (Eigen::Index)p.cols()) +=
            g.middleCols((Eigen::Index)off, (Eigen::Index)p.cols());
      }
      off += p.cols();
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Tensor out = with_shape({a.rows(), count});
  out.map() = a.map().middleCols((Eigen::Index)start, (Eigen::Index)count);
  track(out, {a.node}, [a, start, count](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)a.rows(), (Eigen::Index)count);
    auto& ga = t.grad_buf(a.node);
    MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols())
        .middleCols((Eigen::Index)start, (Eigen::Index)count) += g;
  });
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.rows()) throw DimensionError("slice_rows: out of range");
  Tensor out = with_shape({count, a.cols()});
  out.map() = a.map().middleRows((Eigen::Index)start, (Eigen::Index)count);
  track(out, {a.node}, [a, start, count](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)count, (Eigen::Index)a.cols());
    auto& ga = t.grad_buf(a.node);
    MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols())
        .middleRows((Eigen::Index)start, (Eigen::Index)count) += g;
  });
  return out;
}

Tensor repeat_rows(const Tensor& a, std::size_t n) {
  if (a.rows() != 1) throw DimensionError("repeat_rows: input must have 1 row");
  Tensor out = with_shape({n, a.cols()});
  out.map() = a.map().replicate((Eigen::Index)n, 1);
  track(out, {a.node}, [a, n](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)n, (Eigen::Index)a.cols());
    auto& ga = t.grad_buf(a.node);
    MatMap(ga.data(), 1, (Eigen::Index)a.cols()) += g.colwise().sum();
  });
  return out;
}

Tensor add_row_bias(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw DimensionError("add_row_bias: bias must be 1x" + std::to_string(a.cols()));
  Tensor out = like(a);
  out.map() = a.map().rowwise() + b.map().row(0);
  check_finite(out, "add_row_bias");
  track(out, {a.node, b.node}, [a, b](Tape& t, int self) {
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols());
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols()) += g;
    }
    if (b.node >= 0) {
      auto& gb = t.grad_buf(b.node);
      MatMap(gb.data(), 1, (Eigen::Index)b.cols()) += g.colwise().sum();
    }
  });
  return out;
}

Tensor colwise_scale(const Tensor& a, const Tensor& s) {
  if (s.rows() != a.rows() || s.cols() != 1)
    throw DimensionError("colwise_scale: scale must be Rx1");
  Tensor out = like(a);
  out.map() = a.map().array().colwise() * s.map().col(0).array();
  check_finite(out, "colwise_scale");
  track(out, {a.node, s.node}, [a, s](Tape& t, int self) {
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols());
    if (a.node >= 0) {
      auto& ga = t.grad_buf(a.node);
      MatMap(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols()).array() +=
          g.array().colwise() * s.map().col(0).array();
    }
    if (s.node >= 0) {
      auto& gs = t.grad_buf(s.node);
      MatMap(gs.data(), (Eigen::Index)s.rows(), 1).col(0) +=
          (g.array() * a.map().array()).rowwise().sum().matrix();
    }
  });
  return out;
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Tensor out = scalar(a.map().sum());
  check_finite(out, "sum");
  track(out, {a.node}, [a](Tape& t, int self) {
    if (a.node < 0) return;
    double g = t.grad_buf(self)[0];
    auto& ga = t.grad_buf(a.node);
    for (auto& v : ga) v += g;
  });
  return out;
}

Tensor sum_axis(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("sum_axis: axis must be 0 or 1");
  Tensor out = axis == 0 ? with_shape({1, a.cols()}) : with_shape({a.rows(), 1});
  if (axis == 0)
    out.map().row(0) = a.map().colwise().sum();
  else
    out.map().col(0) = a.map().rowwise().sum();
  check_finite(out, "sum_axis");
  track(out, {a.node}, [a, axis](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    auto& ga = t.grad_buf(a.node);
    MatMap gm(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols());
    if (axis == 0) {
      ConstMatMap g(graw.data(), 1, (Eigen::Index)a.cols());
      gm.array().rowwise() += g.row(0).array();
    } else {
      ConstMatMap g(graw.data(), (Eigen::Index)a.rows(), 1);
      gm.array().colwise() += g.col(0).array();
    }
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / (double)a.size()); }

// ---- elementwise nonlinearities ----------------------------------------------

Tensor tanh_(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor sin_(const Tensor& a) {
  return unary_op(a, "sin", [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Tensor exp_(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
  for (double v : *a.data)
    if (v <= 0.0) throw NumericError("log: non-positive input");
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_(const Tensor& a) {
  for (double v : *a.data)
    if (v < 0.0) throw NumericError("sqrt: negative input");
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / (y > 0 ? y : 1e-300); });
}

Tensor softplus(const Tensor& a) {
  // log(1+exp(x)) via the stable branch max(x,0) + log1p(exp(-|x|)).
  return unary_op(
      a, "softplus",
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary_op(a, "clamp_min",
                  [floor](double x) { return x > floor ? x : floor; },
                  [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  Tensor out = like(a);
  auto src = a.map();
  auto dst = out.map();
  auto norm_slice = [](Eigen::VectorXd v) {
    double m = v.maxCoeff();
    Eigen::VectorXd e = (v.array() - m).exp();
    return Eigen::VectorXd(e / e.sum());
  };
  if (axis == 1) {
    for (Eigen::Index r = 0; r < src.rows(); ++r)
      dst.row(r) = norm_slice(src.row(r).transpose()).transpose();
  } else {
    for (Eigen::Index c = 0; c < src.cols(); ++c)
      dst.col(c) = norm_slice(src.col(c));
  }
  check_finite(out, "softmax");
  track(out, {a.node}, [a, out, axis](Tape& t, int self) {
    if (a.node < 0) return;
    auto& graw = t.grad_buf(self);
    ConstMatMap g(graw.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols());
    auto y = out.map();
    auto& ga = t.grad_buf(a.node);
    MatMap gm(ga.data(), (Eigen::Index)a.rows(), (Eigen::Index)a.cols());
    if (axis == 1) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double dot = (g.row(r).array() * y.row(r).array()).sum();
        gm.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    } else {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        double dot = (g.col(c).array() * y.col(c).array()).sum();
        gm.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
      }
    }
  });
  return out;
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sqnorm(const Tensor& a) { return sum(square(a)); }

}  // namespace gsnf
