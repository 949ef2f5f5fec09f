#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records every op applied to its Vars together with a backward
// closure; Graph::backward replays the tape in reverse. All kernels compute
// each output row independently with a fixed accumulation order, so a row's
// value does not depend on how many other rows share the batch. Rollout-time
// and training-time forward passes rely on this to agree bit for bit.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dtppo::ad {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Dense kernels. Each `_acc` variant accumulates into its output.
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);     // out += a b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);  // out += a^T b
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);  // out += a b^T
Matrix transpose(const Matrix& a);

class Graph;
class ParamStore;

class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Per-parameter gradients aligned with a ParamStore's iteration order.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& store);

  std::size_t size() const { return grads_.size(); }
  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  const Matrix& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  double global_norm() const;
  void scale(double s);
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> grads_;
};

class Graph {
 public:
  // Receives the gradient of the node's output.
  using Backward = std::function<void(Graph&, const Matrix&)>;

  // A non-recording graph skips backward closures (inference only).
  explicit Graph(bool record = true);

  Var constant(Matrix value);
  // Leaf bound to a named parameter. Repeated lookups share one node.
  Var parameter(const ParamStore& store, const std::string& name);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  const Matrix& grad(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  bool recording() const { return record_; }

  // Raises Error(kNonFiniteLoss) as soon as any op produces NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  void backward(Var loss);
  Gradients parameter_gradients(const ParamStore& store) const;

  // Op-author interface.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Matrix& grad_mut(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }
  bool wants(int id) const { return nodes_[id].needs_grad; }
  const Matrix& value_of(int id) const { return nodes_[id].value; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  bool record_;
  bool check_finite_;
  std::deque<Node> nodes_;  // stable addresses: ops hold value references across record()
  std::unordered_map<std::string, int> param_nodes_;
};

/// Reverse-mode gradients of a 1x1 `loss` for every parameter in `store`.
/// Parameters the loss does not reach get exact zeros. Throws
/// Error(kNotScalarLoss) otherwise.
Gradients grad(Var loss, const ParamStore& store);

// Shape errors raise Error(kShapeMismatch) naming both operand shapes.
Var matmul(Var a, Var b);
Var linear(Var x, Var w, Var b = {});  // x w + b, b is 1 x n
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var x, Var row);   // broadcast a 1 x n row over every row
Var mul_row(Var x, Var row);
Var add_tiled(Var x, Var table);  // row r of x gets table row (r mod T)
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var scale_rows(Var x, std::vector<double> weights);  // row r scaled by weights[r]
Var mask_rows(Var x, const std::vector<std::uint8_t>& keep);

Var tanh(Var x);
Var sigmoid(Var x);
Var gelu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);
Var minimum(Var a, Var b);

Var sum(Var x);       // 1 x 1
Var mean(Var x);      // 1 x 1
Var row_sum(Var x);   // r x 1
Var mse(Var a, Var b);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var slice_cols(Var x, std::size_t start, std::size_t count);
// Row i of the result is x[index[i]], or zeros when index[i] < 0.
Var gather_rows(Var x, std::vector<std::int64_t> index);
Var stop_gradient(Var x);

// Mean over the valid rows of each consecutive block of `block` rows.
Var block_masked_mean(Var x, std::size_t block, const std::vector<std::uint8_t>& valid);

// Scaled dot-product attention over independent blocks of rows.
struct AttentionLayout {
  std::size_t block = 1;  // tokens per sequence
  std::size_t heads = 1;
  std::vector<std::uint8_t> valid;  // one flag per row; empty means all valid
  bool causal = false;              // query j sees keys <= j within its block
};

/// q, k, v are (blocks * block) x (heads * head_dim). Invalid keys receive
/// exactly zero weight and invalid query rows produce zero output.
Var attention(Var q, Var k, Var v, const AttentionLayout& layout);

}  // namespace dtppo::ad
