#pragma once

// Named dense f64 tensors: model parameters, their gradients, and the
// deterministic initializers used to create them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "roipoly/errors.hpp"

namespace roipoly {

struct Tensor {
  std::vector<int> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, double fill = 0.0) : dims(std::move(d)) {
    data.assign(element_count(dims), fill);
  }

  static std::size_t element_count(const std::vector<int>& d) {
    std::size_t n = 1;
    for (int x : d) n *= static_cast<std::size_t>(x);
    return n;
  }
  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(dims.size()); }
  /// Matrix view used by the tape: first dimension are rows, the rest columns.
  int rows() const { return dims.empty() ? 1 : (dims.size() == 1 ? 1 : dims[0]); }
  int cols() const { return static_cast<int>(size() / static_cast<std::size_t>(rows())); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Name-ordered tensor collection. Iteration order is lexicographic by name,
/// which fixes checkpoint layout and optimizer traversal.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    auto [it, inserted] = tensors_.emplace(name, std::move(t));
    if (!inserted) throw InvalidInput("duplicate parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidInput("unknown parameter '" + name + "'");
    return it->second;
  }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Zero-filled store with identical names and shapes.
  ParamStore zeros_like() const {
    ParamStore z;
    for (const auto& [name, t] : tensors_) z.add(name, Tensor(t.dims, 0.0));
    return z;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

namespace init {

/// Glorot-uniform matrix of shape (fan_out, fan_in).
inline Tensor xavier(std::mt19937_64& rng, int fan_out, int fan_in, double gain = 1.0) {
  Tensor t({fan_out, fan_in});
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& x : t.data) x = u(rng);
  return t;
}

inline Tensor normal(std::mt19937_64& rng, std::vector<int> dims, double stddev) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> n(0.0, stddev);
  for (double& x : t.data) x = n(rng);
  return t;
}

}  // namespace init

}  // namespace roipoly
