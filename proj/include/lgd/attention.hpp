#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/config.hpp"
#include "lgd/layers.hpp"
#include "lgd/ops.hpp"
#include "lgd/params.hpp"

namespace lgd {

/// Softmax temperature: sqrt(C / T) per head, or sqrt(C) in full mode.
inline double attention_temperature(std::size_t channels, std::size_t heads, TemperatureMode mode) {
  return mode == TemperatureMode::kFull ? std::sqrt(static_cast<double>(channels))
                                        : std::sqrt(static_cast<double>(channels / heads));
}

/// Query and key maps are bias-free; value and output maps carry biases.
/// One parameter set serves every pyramid level.
inline void init_attention(ParameterStore& store, int channels, Rng& rng) {
  const auto c = static_cast<std::size_t>(channels);
  add_linear(store, "lgd.attn.q", c, c, rng, false);
  add_linear(store, "lgd.attn.k", c, c, rng, false);
  add_linear(store, "lgd.attn.v", c, c, rng);
  add_linear(store, "lgd.attn.o", c, c, rng);
}

struct AttentionResult {
  Var embeddings;                // [(N + 1), C]
  std::vector<Tensor> weights;   // one [(N + 1), (N + 1)] matrix per head
};

/// Multi-head cross-attention. With the default query direction the
/// appearance embeddings attend over the label embeddings; the label
/// direction swaps the roles. Head t uses columns [t*C/T, (t+1)*C/T) of the
/// shared projections, so the per-head maps f^t are C -> C/T.
inline AttentionResult cross_attention(Graph& g, ParameterStore& store, Var appearance, Var labels,
                                       const LgdConfig& cfg) {
  if (appearance.shape().size() != 2 || appearance.shape() != labels.shape()) {
    throw shape_error("cross_attention", appearance.shape(), labels.shape());
  }
  const std::size_t c = appearance.shape()[1];
  const auto heads = static_cast<std::size_t>(cfg.heads);
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("cross_attention: " + std::to_string(heads) + " heads do not divide " +
                                std::to_string(c) + " channels");
  }
  const bool student_query = cfg.query == QueryDirection::kStudent;
  Var query_src = student_query ? appearance : labels;
  Var kv_src = student_query ? labels : appearance;

  Var q = apply_linear(g, store, "lgd.attn.q", query_src);
  Var k = apply_linear(g, store, "lgd.attn.k", kv_src);
  Var v = apply_linear(g, store, "lgd.attn.v", kv_src);
  const std::size_t dh = c / heads;
  const double tau = attention_temperature(c, heads, cfg.temperature);

  AttentionResult res;
  std::vector<Var> partial;
  for (std::size_t t = 0; t < heads; ++t) {
    Var qt = slice_cols(q, t * dh, (t + 1) * dh);
    Var kt = slice_cols(k, t * dh, (t + 1) * dh);
    Var vt = slice_cols(v, t * dh, (t + 1) * dh);
    Var w = softmax_rows(matmul(qt, transpose(kt)), tau);
    res.weights.push_back(w.value());
    partial.push_back(matmul(w, vt));
  }
  res.embeddings = apply_linear(g, store, "lgd.attn.o", concat_channels(partial));
  return res;
}

}  // namespace lgd
