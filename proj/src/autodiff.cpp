#include "dtppo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dtppo/errors.hpp"
#include "dtppo/param_store.hpp"

namespace dtppo::ad {

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                "matrix data length " + std::to_string(data_.size()) + " does not match " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorCode::kShapeMismatch, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* br = b.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      double* o = out.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  matmul_acc(a, transpose(b), out);
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Var / Gradients

const Matrix& Var::value() const { return graph_->value(*this); }

Gradients::Gradients(const ParamStore& store) {
  names_.reserve(store.size());
  grads_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    names_.push_back(store.name(i));
    grads_.emplace_back(store.value(i).rows(), store.value(i).cols());
  }
}

const Matrix& Gradients::at(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return grads_[i];
  }
  throw std::out_of_range("no gradient for parameter '" + name + "'");
}

double Gradients::global_norm() const {
  double s = 0.0;
  for (const Matrix& m : grads_) {
    for (double v : m.values()) s += v * v;
  }
  return std::sqrt(s);
}

void Gradients::scale(double s) {
  for (Matrix& m : grads_) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] *= s;
  }
}

bool Gradients::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(), [](const Matrix& m) { return m.all_finite(); });
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(bool record) : record_(record) {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

Var Graph::constant(Matrix value) {
  if (check_finite_ && !value.all_finite()) {
    throw Error(ErrorCode::kNonFiniteLoss, "non-finite constant");
  }
  nodes_.push_back(Node{std::move(value), Matrix{}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::parameter(const ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{store.value(name), Matrix{}, nullptr, record_});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(name, id);
  return Var(this, id);
}

const Matrix& Graph::grad(Var v) const {
  static const Matrix kEmpty;
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? kEmpty : n.grad;
}

Var Graph::record(const char* op, Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  if (check_finite_ && !value.all_finite()) {
    throw Error(ErrorCode::kNonFiniteLoss, std::string("non-finite value produced by ") + op);
  }
  bool needs = false;
  if (record_) {
    for (Var in : inputs) needs = needs || (in.valid() && nodes_[in.id()].needs_grad);
  }
  nodes_.push_back(Node{std::move(value), Matrix{}, needs ? std::move(fn) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_mut(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a non-recording graph");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorCode::kNotScalarLoss,
                "loss must be 1x1, got " + loss.value().shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix{};
  grad_mut(loss.id())(0, 0) = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

Gradients Graph::parameter_gradients(const ParamStore& store) const {
  Gradients out(store);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto it = param_nodes_.find(store.name(i));
    if (it == param_nodes_.end()) continue;
    const Node& n = nodes_[it->second];
    if (!n.grad.empty()) out[i] = n.grad;
  }
  return out;
}

Gradients grad(Var loss, const ParamStore& store) {
  loss.graph().backward(loss);
  return loss.graph().parameter_gradients(store);
}

}  // namespace dtppo::ad
