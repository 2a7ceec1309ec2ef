#pragma once

// Intra-object knowledge mapping: paints interacted embeddings into their box
// regions, refines them into instructive feature maps, and scores the adapted
// student features against them.

#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/layers.hpp"
#include "lgd/ops.hpp"
#include "lgd/params.hpp"

namespace lgd {

inline void init_mapper(ParameterStore& store, int channels, Rng& rng) {
  const auto c = static_cast<std::size_t>(channels);
  add_linear(store, "lgd.mapper.ctx", c, c, rng);
  add_linear(store, "lgd.mapper.inst", c, c, rng);
  add_conv3x3(store, "lgd.mapper.g", c, c, rng);
  for (int i = 1; i <= 3; ++i) add_conv3x3(store, "lgd.mapper.ref" + std::to_string(i), c, c, rng);
}

inline void init_adapter(ParameterStore& store, int channels, Rng& rng) {
  const auto c = static_cast<std::size_t>(channels);
  add_conv3x3(store, "lgd.adapt.c1", c, c, rng);
  add_conv3x3(store, "lgd.adapt.c2", c, c, rng);
}

/// Instructive map for one level:
///   F_ref[ m_0 F_ctx(e_0)^T + G( sum_{i>=1} m_i F_inst(e_i)^T ) ]
/// with F_ref = relu -> conv -> conv -> conv. Overlapping boxes add up.
/// Dropping context participation removes the m_0 term.
inline Var map_knowledge(Graph& g, ParameterStore& store, Var interacted, const Tensor& masks, std::size_t height,
                         std::size_t width, bool context_participation = true) {
  detail::require_rank("map_knowledge", interacted, 2);
  const std::size_t rows = interacted.shape()[0], c = interacted.shape()[1], cells = height * width;
  if (masks.rank() != 2 || masks.dim(0) != rows || masks.dim(1) != cells) {
    throw shape_error("map_knowledge", interacted.shape(), masks.shape());
  }
  Var masks_t = transpose(g.constant(masks));  // [cells, N + 1]
  Var objects;
  if (rows > 1) {
    Var inst = apply_linear(g, store, "lgd.mapper.inst", slice_rows(interacted, 1, rows));
    objects = reshape(matmul(slice_cols(masks_t, 1, rows), inst), {height, width, c});
  } else {
    objects = g.constant(Tensor({height, width, c}));
  }
  Var base = apply_conv3x3(g, store, "lgd.mapper.g", objects);
  if (context_participation) {
    Var ctx = apply_linear(g, store, "lgd.mapper.ctx", slice_rows(interacted, 0, 1));
    base = add(base, reshape(matmul(slice_cols(masks_t, 0, 1), ctx), {height, width, c}));
  }
  Var x = relu(base);
  for (int i = 1; i <= 3; ++i) x = apply_conv3x3(g, store, "lgd.mapper.ref" + std::to_string(i), x);
  return x;
}

/// X^S = conv -> relu -> conv, one parameter set for all levels.
inline Var adapt_student(Graph& g, ParameterStore& store, Var x) {
  return apply_conv3x3(g, store, "lgd.adapt.c2", relu(apply_conv3x3(g, store, "lgd.adapt.c1", x)));
}

/// (1 / sum_p H_p W_p C) * sum_p || IN(X_p^S) - IN(detach(X_p^I)) ||^2.
inline Var distill_loss(const std::vector<Var>& student, const std::vector<Var>& instructive, double eps = 1e-5) {
  if (student.size() != instructive.size() || student.empty()) {
    throw std::invalid_argument("distill_loss: level count mismatch");
  }
  Var total;
  double n_total = 0.0;
  for (std::size_t p = 0; p < student.size(); ++p) {
    if (student[p].shape() != instructive[p].shape()) {
      throw shape_error("distill_loss", student[p].shape(), instructive[p].shape());
    }
    Var diff = sub(instance_norm(student[p], eps), instance_norm(detach(instructive[p]), eps));
    Var term = squared_sum(diff);
    total = total.valid() ? add(total, term) : term;
    n_total += static_cast<double>(student[p].value().size());
  }
  return scale(total, 1.0 / n_total);
}

}  // namespace lgd
