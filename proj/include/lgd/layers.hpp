#pragma once

#include <cmath>
#include <string>

#include "lgd/ops.hpp"
#include "lgd/params.hpp"
#include "lgd/random.hpp"

namespace lgd {

// Parameter allocation. Weights are He-uniform, U(-sqrt(6/fan_in), sqrt(6/fan_in));
// biases start at zero.

inline void he_uniform(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
}

inline void add_conv3x3(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout,
                        Rng& rng) {
  Tensor w({3, 3, cin, cout});
  he_uniform(w, 9 * cin, rng);
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Tensor({cout}));
}

inline void add_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true) {
  Tensor w({in, out});
  he_uniform(w, in, rng);
  store.add(name + ".w", std::move(w));
  if (bias) store.add(name + ".b", Tensor({out}));
}

inline void add_layer_norm(ParameterStore& store, const std::string& name, std::size_t dim) {
  store.add(name + ".g", Tensor({dim}, 1.0));
  store.add(name + ".b", Tensor({dim}));
}

// Application helpers binding named parameters onto a graph.

inline Var apply_conv3x3(Graph& g, ParameterStore& store, const std::string& name, Var x, std::size_t stride = 1) {
  return conv3x3(x, store.bind(g, name + ".w"), store.bind(g, name + ".b"), stride);
}

inline Var apply_conv1x1(Graph& g, ParameterStore& store, const std::string& name, Var x) {
  return conv1x1(x, store.bind(g, name + ".w"), store.bind(g, name + ".b"));
}

inline Var apply_linear(Graph& g, ParameterStore& store, const std::string& name, Var x) {
  Var b = store.contains(name + ".b") ? store.bind(g, name + ".b") : Var{};
  return linear(x, store.bind(g, name + ".w"), b);
}

inline Var apply_layer_norm(Graph& g, ParameterStore& store, const std::string& name, Var x) {
  return layer_norm(x, store.bind(g, name + ".g"), store.bind(g, name + ".b"));
}

/// Sets a 3x3 kernel [3,3,C,C] to the identity (centre tap 1 on the diagonal).
inline void set_identity_kernel(Tensor& w) {
  std::fill(w.values().begin(), w.values().end(), 0.0);
  const std::size_t c = w.dim(2);
  for (std::size_t k = 0; k < c; ++k) w[((1 * 3 + 1) * c + k) * w.dim(3) + k] = 1.0;
}

}  // namespace lgd
