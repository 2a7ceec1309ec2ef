#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline bool needs_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Values captured by `detach` during a recording pass, replayed verbatim on
/// later passes so that stop-gradient inputs stay fixed under perturbation.
struct DetachLog {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<Tensor> values;
  std::size_t cursor = 0;
};

/// Reverse-mode tape. Nodes are appended in topological order; `backward`
/// walks them in reverse. Gradients accumulate additively into bound
/// parameter tensors.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::span<const double>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is kept on the graph (read back with `grad`).
  Var input(Tensor value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to an external parameter; backward accumulates into `p.grad()`.
  /// The tensor must outlive the graph's backward pass.
  Var param(Tensor& p) {
    Var v = push(p, p.requires_grad(), p.requires_grad() ? &p : nullptr, {});
    return v;
  }

  Var detach(Var x) {
    if (detach_log_ == nullptr) return constant(x.value());
    if (detach_log_->mode == DetachLog::Mode::kRecord) {
      detach_log_->values.push_back(x.value());
      return constant(x.value());
    }
    if (detach_log_->cursor >= detach_log_->values.size()) {
      throw std::logic_error("detach: replay log exhausted");
    }
    const Tensor& stored = detach_log_->values[detach_log_->cursor++];
    if (stored.shape() != x.shape()) throw shape_error("detach(replay)", stored.shape(), x.shape());
    return constant(stored);
  }

  void set_detach_log(DetachLog* log) { detach_log_ = log; }

  /// Records a derived node. `backward` receives the output gradient and must
  /// accumulate into parents via `accumulate`.
  Var record(Tensor value, bool needs_grad, Backward backward) {
    return push(std::move(value), needs_grad, nullptr, std::move(backward));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adds `g` into the gradient buffer of node `id` (no-op if it needs none).
  void accumulate(std::size_t id, std::span<const double> g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  /// Direct access for ops that scatter sparsely; allocates on demand.
  Buffer* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return &n.grad;
  }

  std::span<const double> grad(Var v) const { return nodes_[v.id()].grad; }

  void backward(Var loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    Node& root = nodes_[loss.id()];
    if (!root.needs_grad) return;
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) {
        // Copy out: the callback may grow nodes_ only in pathological cases,
        // but must never observe its own buffer changing underneath it.
        Buffer g = std::move(n.grad);
        n.grad.clear();
        n.backward(*this, g);
        nodes_[i].grad = std::move(g);
      }
      if (Tensor* p = nodes_[i].bound) {
        auto& pg = p->ensure_grad();
        const auto& g = nodes_[i].grad;
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    Tensor* bound = nullptr;
    Backward backward;
    Buffer grad;
  };

  Var push(Tensor value, bool needs_grad, Tensor* bound, Backward backward) {
    nodes_.push_back(Node{std::move(value), needs_grad, bound, std::move(backward), {}});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  DetachLog* detach_log_ = nullptr;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Shape& Var::shape() const { return graph_->value(id_).shape(); }
inline bool Var::needs_grad() const { return graph_->needs_grad(id_); }

}  // namespace lgd
