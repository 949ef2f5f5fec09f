#include "dtppo/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "dtppo/errors.hpp"

namespace dtppo::ad {

void ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::kConfigError, "duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  const std::size_t r = value.rows(), c = value.cols();
  entries_.push_back(Entry{name, std::move(value), Matrix(r, c), Matrix(r, c)});
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.name);
  return out;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.step_ != b.step_ || a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || !(x.value == y.value) || !(x.m == y.m) || !(x.v == y.v)) return false;
  }
  return true;
}

void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg) {
  if (grads.size() != store.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient count " + std::to_string(grads.size()) +
                                               " does not match " + std::to_string(store.size()) +
                                               " parameters");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& g = grads[i];
    const Matrix& w = store.value(i);
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient for '" + store.name(i) + "' has shape " +
                                                 g.shape_string() + ", parameter is " +
                                                 w.shape_string());
    }
  }
  const std::int64_t t = store.step() + 1;
  store.set_step(t);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& g = grads[i];
    Matrix& w = store.value(i);
    Matrix& m = store.first_moment(i);
    Matrix& v = store.second_moment(i);
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Matrix truncated_normal(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    out[i] = z * std;
  }
  return out;
}

}  // namespace dtppo::ad
