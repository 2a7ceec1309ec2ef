#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/graph.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

/// Named trainable tensors with SGD momentum buffers. Iteration order is the
/// lexicographic order of names, which keeps checkpoints byte-stable.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Buffer momentum;
  };

  Tensor& add(const std::string& name, Tensor value) {
    if (entries_.count(name)) throw std::invalid_argument("ParameterStore: duplicate name " + name);
    value.set_requires_grad(true);
    auto& e = entries_[name];
    e.momentum.assign(value.size(), 0.0);
    e.value = std::move(value);
    return e.value;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParameterStore: no parameter named " + name);
    return it->second.value;
  }
  const Tensor& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParameterStore: no parameter named " + name);
    return it->second.value;
  }

  /// Binds a parameter as a leaf of `g`.
  Var bind(Graph& g, const std::string& name) { return g.param(get(name)); }

  Buffer& momentum(const std::string& name) { return entries_.at(name).momentum; }
  const Buffer& momentum(const std::string& name) const { return entries_.at(name).momentum; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  /// Allocates (if needed) and zeroes every gradient buffer.
  void zero_grad() {
    for (auto& [_, e] : entries_) {
      e.value.ensure_grad();
      e.value.zero_grad();
    }
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

inline bool has_prefix(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

/// Rescales the gradients of non-frozen entries so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& store, double max_norm,
                             const std::function<bool(const std::string&)>& frozen = {}) {
  double sq = 0.0;
  for (auto& [name, e] : store.entries()) {
    if (frozen && frozen(name)) continue;
    for (double v : e.value.grad()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, e] : store.entries()) {
      if (frozen && frozen(name)) continue;
      for (double& v : e.value.grad()) v *= f;
    }
  }
  return norm;
}

/// One SGD step with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
/// Gradients are zeroed afterwards. Entries for which `frozen(name)` holds
/// are left untouched, momentum included.
inline void sgd_update(ParameterStore& store, double lr, double momentum, double weight_decay,
                       const std::function<bool(const std::string&)>& frozen = {}) {
  for (auto& [name, e] : store.entries()) {
    if (frozen && frozen(name)) {
      e.value.zero_grad();
      continue;
    }
    if (e.value.grad().size() != e.value.size()) {
      throw std::logic_error("sgd_update: missing gradient for parameter " + name);
    }
    auto w = e.value.values();
    auto g = e.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      e.momentum[i] = momentum * e.momentum[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * e.momentum[i];
    }
    e.value.zero_grad();
  }
}

}  // namespace lgd
