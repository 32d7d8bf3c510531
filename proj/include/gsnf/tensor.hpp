#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "gsnf/errors.hpp"

namespace gsnf {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

class Tape;

/// Dense 64-bit tensor, rank 0..2, row-major. Immutable value semantics:
/// operations never mutate their inputs. `node` links the tensor into the
/// active Tape; -1 means untracked constant.
struct Tensor {
  std::vector<std::size_t> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // parameters only
  int node = -1;

  Tensor() = default;

  std::size_t size() const { return data ? data->size() : 0; }
  // Rank-1 tensors are columns; rank-0 are 1x1.
  std::size_t rows() const {
    if (shape.empty()) return 1;
    return shape[0];
  }
  std::size_t cols() const {
    if (shape.size() < 2) return 1;
    return shape[1];
  }
  double value() const;  // scalar access, throws unless size()==1
  double at(std::size_t i) const { return (*data)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data)[r * cols() + c]; }

  MatMap map() { return MatMap(data->data(), (Eigen::Index)rows(), (Eigen::Index)cols()); }
  ConstMatMap map() const {
    return ConstMatMap(data->data(), (Eigen::Index)rows(), (Eigen::Index)cols());
  }
};

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> values);
Tensor scalar(double v);
Tensor zeros(std::vector<std::size_t> shape);
Tensor full(std::vector<std::size_t> shape, double v);
Tensor from_matrix(const Matrix& m);
Tensor eye(std::size_t n);

void check_finite(const Tensor& t, const char* what);

/// Reverse-mode tape. Single-threaded: one forward/backward pass owns it.
/// Nodes are recorded in topological order; backward visits each recorded
/// node exactly once, in reverse.
class Tape {
 public:
  using Pull = std::function<void(Tape&, int self)>;

  int record(std::size_t out_size, std::vector<int> parents, Pull pull);

  /// Registers a value as a differentiable input and returns a tracked copy.
  Tensor leaf(const Tensor& t);

  /// Accumulates d(root)/d(node) for every recorded node. root must be a
  /// tracked scalar. Deactivates the tape.
  void backward(const Tensor& root);

  /// Gradient for a node after backward(); zeros if the node did not
  /// influence the root.
  std::vector<double> grad(int node) const;

  std::vector<double>& grad_buf(int node);
  bool active() const { return active_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> parents;
    Pull pull;
    std::size_t size;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool active_ = true;
};

/// RAII scope installing `tape` as the thread's active tape. Ops record onto
/// the active tape whenever any input is tracked.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// ---- differentiable operations ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale_by(const Tensor& a, const Tensor& s);  // s: tracked scalar

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor repeat_rows(const Tensor& a, std::size_t n);     // a: 1xC -> nxC
Tensor add_row_bias(const Tensor& a, const Tensor& b);  // b: 1xC broadcast
Tensor colwise_scale(const Tensor& a, const Tensor& s); // s: Rx1 per-row scale

Tensor sum(const Tensor& a);                     // scalar
Tensor sum_axis(const Tensor& a, int axis);      // 0 -> 1xC, 1 -> Rx1
Tensor mean(const Tensor& a);                    // scalar

Tensor tanh_(const Tensor& a);
Tensor sin_(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);
Tensor softmax(const Tensor& a, int axis);

Tensor square(const Tensor& a);
Tensor sqnorm(const Tensor& a);  // scalar sum of squares

}  // namespace gsnf
