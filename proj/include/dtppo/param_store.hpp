#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dtppo/autodiff.hpp"

namespace dtppo::ad {

/// Named parameters in insertion order, each with Adam moment slots.
class ParamStore {
 public:
  // Throws Error(kConfigError) on a duplicate name.
  void add(const std::string& name, Matrix value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Matrix& value(std::size_t i) { return entries_[i].value; }
  const Matrix& value(std::size_t i) const { return entries_[i].value; }
  Matrix& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Matrix& value(const std::string& name) const { return entries_[index_of(name)].value; }

  Matrix& first_moment(std::size_t i) { return entries_[i].m; }
  const Matrix& first_moment(std::size_t i) const { return entries_[i].m; }
  Matrix& second_moment(std::size_t i) { return entries_[i].v; }
  const Matrix& second_moment(std::size_t i) const { return entries_[i].v; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix m;
    Matrix v;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Throws Error(kShapeMismatch) if `grads`
/// does not line up with the store.
void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg);

/// Normal(0, std) samples redrawn until they fall within two standard deviations.
Matrix truncated_normal(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng);

}  // namespace dtppo::ad
