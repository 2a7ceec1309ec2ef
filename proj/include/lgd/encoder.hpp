#pragma once

// Label-appearance encoding: label descriptors through a shared-MLP set
// encoder, and per-level appearance embeddings by mask pooling projected
// student features.

#include <string>
#include <vector>

#include "lgd/config.hpp"
#include "lgd/layers.hpp"
#include "lgd/ops.hpp"
#include "lgd/params.hpp"
#include "lgd/scene.hpp"

namespace lgd {

inline std::size_t descriptor_dim(int num_classes) { return 4 + static_cast<std::size_t>(num_classes) + 1; }

/// Descriptor rows [(N + 1), 4 + K + 1]: normalized box followed by a one-hot
/// over K classes plus a context slot. Row 0 is the whole-image context object.
inline Tensor build_descriptors(const std::vector<Annotation>& anns, int num_classes) {
  const std::size_t d = descriptor_dim(num_classes);
  Tensor out({anns.size() + 1, d});
  out.at(0, 0) = kContextBox.x1;
  out.at(0, 1) = kContextBox.y1;
  out.at(0, 2) = kContextBox.x2;
  out.at(0, 3) = kContextBox.y2;
  out.at(0, 4 + static_cast<std::size_t>(num_classes)) = 1.0;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& a = anns[i];
    out.at(i + 1, 0) = a.box.x1;
    out.at(i + 1, 1) = a.box.y1;
    out.at(i + 1, 2) = a.box.x2;
    out.at(i + 1, 3) = a.box.y2;
    out.at(i + 1, 4 + static_cast<std::size_t>(a.category)) = 1.0;
  }
  return out;
}

inline void init_label_encoder(ParameterStore& store, const LgdConfig& cfg, int num_classes, int channels, Rng& rng) {
  const auto h1 = static_cast<std::size_t>(cfg.label_hidden[0]);
  const auto h2 = static_cast<std::size_t>(cfg.label_hidden[1]);
  add_linear(store, "lgd.label_enc.fc1", descriptor_dim(num_classes), h1, rng);
  add_layer_norm(store, "lgd.label_enc.ln1", h1);
  add_linear(store, "lgd.label_enc.fc2", h1, h2, rng);
  add_layer_norm(store, "lgd.label_enc.ln2", h2);
  const std::size_t head_in = cfg.encoder == EncoderKind::kPointNetLite ? 2 * h2 : h2;
  add_linear(store, "lgd.label_enc.out", head_in, static_cast<std::size_t>(channels), rng);
}

/// Label embeddings L [(N + 1), C]. Each row passes through a shared
/// affine -> LayerNorm -> ReLU stack; in PointNet-lite mode the per-row
/// features are concatenated with their column-wise max before the output
/// affine, which keeps the map permutation-equivariant.
inline Var encode_labels(Graph& g, ParameterStore& store, Var descriptors, const LgdConfig& cfg) {
  Var h = relu(apply_layer_norm(g, store, "lgd.label_enc.ln1", apply_linear(g, store, "lgd.label_enc.fc1", descriptors)));
  h = relu(apply_layer_norm(g, store, "lgd.label_enc.ln2", apply_linear(g, store, "lgd.label_enc.fc2", h)));
  if (cfg.encoder == EncoderKind::kPointNetLite) {
    Var global = repeat_rows(max_rows(h), h.shape()[0]);
    h = concat_channels({h, global});
  }
  return apply_linear(g, store, "lgd.label_enc.out", h);
}

inline std::string projection_name(std::size_t level) { return "lgd.proj.p" + std::to_string(level + 1); }

inline void init_projections(ParameterStore& store, std::size_t levels, int channels, Rng& rng) {
  const auto c = static_cast<std::size_t>(channels);
  for (std::size_t p = 0; p < levels; ++p) add_conv3x3(store, projection_name(p), c, c, rng);
}

/// Per-level 3x3 projection of a student feature map.
inline Var project_features(Graph& g, ParameterStore& store, std::size_t level, Var x) {
  return apply_conv3x3(g, store, projection_name(level), x);
}

/// a_i = sum over cells of m_i[cell] * projected[cell, :], for every mask row.
inline Var mask_pool(Var projected, const Tensor& masks) {
  detail::require_rank("mask_pool", projected, 3);
  const std::size_t h = projected.shape()[0], w = projected.shape()[1], c = projected.shape()[2];
  if (masks.rank() != 2 || masks.dim(1) != h * w) throw shape_error("mask_pool", projected.shape(), masks.shape());
  Graph& g = projected.graph();
  return matmul(g.constant(masks), reshape(projected, {h * w, c}));
}

}  // namespace lgd
