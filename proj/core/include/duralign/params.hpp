#pragma once

// Named parameter storage: value, gradient accumulator and Adam moments per
// entry. Entries are kept in a sorted map so every traversal (gradient
// reduction, checkpointing, reporting) has one canonical order.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "duralign/tensor.hpp"

namespace duralign {

template <class T>
class ParameterStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;  // Adam first moment
    Tensor<T> v;  // Adam second moment
    bool trainable = true;
  };

  Tensor<T>& create(const std::string& name, Shape shape, bool trainable = true) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Entry e;
    e.value = Tensor<T>(shape);
    e.grad = Tensor<T>(shape);
    e.m = Tensor<T>(shape);
    e.v = Tensor<T>(std::move(shape));
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }

  void zero_grads() {
    for (auto& [name, e] : entries_)
      for (auto& g : e.grad.v) g = T(0);
  }

  void add_gradients(const std::map<std::string, Tensor<T>>& grads) {
    for (const auto& [name, g] : grads) {
      Tensor<T>& dst = grad(name);
      if (dst.size() != g.size()) throw std::invalid_argument("gradient shape mismatch for " + name);
      for (int64_t i = 0; i < g.size(); ++i) dst.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
    }
  }

  void scale_gradients(T s) {
    for (auto& [name, e] : entries_)
      for (auto& g : e.grad.v) g *= s;
  }

  /// Rescales all trainable gradients so their global L2 norm is at most
  /// `max_norm`. Returns the pre-clip norm.
  double clip_gradients(double max_norm) {
    double sq = 0;
    for (auto& [name, e] : entries_) {
      if (!e.trainable) continue;
      for (T g : e.grad.v) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      T factor = static_cast<T>(max_norm / norm);
      for (auto& [name, e] : entries_) {
        if (!e.trainable) continue;
        for (auto& g : e.grad.v) g *= factor;
      }
    }
    return norm;
  }

  /// One Adam update over all trainable entries. `t` is the 1-based step used
  /// for bias correction.
  void adam_step(double lr, double beta1, double beta2, double eps, int64_t t) {
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, e] : entries_) {
      if (!e.trainable) continue;
      for (size_t i = 0; i < e.value.v.size(); ++i) {
        double g = static_cast<double>(e.grad.v[i]);
        double m = beta1 * static_cast<double>(e.m.v[i]) + (1.0 - beta1) * g;
        double v = beta2 * static_cast<double>(e.v.v[i]) + (1.0 - beta2) * g * g;
        e.m.v[i] = static_cast<T>(m);
        e.v.v[i] = static_cast<T>(v);
        double update = lr * (m / c1) / (std::sqrt(v / c2) + eps);
        e.value.v[i] = static_cast<T>(static_cast<double>(e.value.v[i]) - update);
      }
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

/// Uniform init in +-sqrt(6/(fan_in+fan_out)); biases stay zero.
template <class T>
void init_glorot_uniform(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace duralign
