#pragma once

// Reverse-mode tape. Forward values are computed eagerly when an op node is
// pushed; each node carries an adjoint closure that scatters its output
// gradient into its parents. Backward walks the tape once in reverse, so the
// traversal is topological by construction and deterministic.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "duralign/params.hpp"
#include "duralign/tensor.hpp"

namespace duralign {

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph<T>&, int)>;

  struct BnObservation {
    std::string name;  // running-stat prefix of the layer
    Tensor<T> mean;
    Tensor<T> var;
  };

  /// Constant leaf; receives no gradient of its own but may be read by ops.
  int leaf(Tensor<T> value, const char* op_name = "const") {
    return push(std::move(value), {}, nullptr, op_name, {});
  }

  /// Leaf bound to a named parameter; its gradient is collected afterwards.
  int param(const ParameterStore<T>& store, const std::string& name) {
    return push(store.entry(name).value, {}, nullptr, "param", name);
  }

  int op(const char* op_name, Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
    return push(std::move(value), std::move(parents), std::move(backward), op_name, {});
  }

  const Tensor<T>& value(int i) const { return nodes_[static_cast<size_t>(i)].value; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  /// Gradient accumulator, allocated as zeros on first touch.
  Tensor<T>& grad_acc(int i) {
    auto& g = grads_[static_cast<size_t>(i)];
    if (g.v.empty() && nodes_[static_cast<size_t>(i)].value.size() > 0)
      g = Tensor<T>(nodes_[static_cast<size_t>(i)].value.shape);
    return g;
  }

  bool grad_ready(int i) const { return !grads_[static_cast<size_t>(i)].v.empty(); }
  const Tensor<T>& grad(int i) const { return grads_[static_cast<size_t>(i)]; }

  /// Reverse pass from a scalar root. Each node is visited exactly once.
  void backward(int root) {
    if (root < 0 || root >= node_count()) throw std::invalid_argument("backward: bad root node");
    if (value(root).size() != 1) throw std::invalid_argument("backward root must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>{});
    grads_.resize(nodes_.size());
    grad_acc(root).v[0] = T(1);
    for (int i = root; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (!n.backward) continue;
      if (!grad_ready(i)) continue;  // node did not contribute to the root
      n.backward(*this, i);
    }
  }

  /// Adds the gradients of all bound parameters into `out` (created as zeros
  /// on first use). Map ordering keeps reductions deterministic.
  void collect_param_gradients(std::map<std::string, Tensor<T>>& out) const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.param_name.empty() || grads_[i].v.empty()) continue;
      auto it = out.find(n.param_name);
      if (it == out.end()) it = out.emplace(n.param_name, Tensor<T>(n.value.shape)).first;
      for (size_t k = 0; k < grads_[i].v.size(); ++k) it->second.v[k] += grads_[i].v[k];
    }
  }

  void accumulate_param_gradients(ParameterStore<T>& store) const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.param_name.empty() || grads_[i].v.empty()) continue;
      Tensor<T>& dst = store.grad(n.param_name);
      for (size_t k = 0; k < grads_[i].v.size(); ++k) dst.v[k] += grads_[i].v[k];
    }
  }

  std::vector<BnObservation> bn_observations;

 private:
  struct Node {
    Tensor<T> value;
    std::vector<int> parents;
    BackwardFn backward;
    const char* op_name;
    std::string param_name;
  };

  int push(Tensor<T> value, std::vector<int> parents, BackwardFn backward, const char* op_name,
           std::string param_name) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    n.op_name = op_name;
    n.param_name = std::move(param_name);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace duralign
