#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/graph.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
inline ConstMatMap as_mat(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap as_mat(Buffer& v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const std::string& op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

inline void require_same_graph(const std::string& op, const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(op + ": operands on different graphs");
}

inline std::size_t last_dim(const Shape& s) { return s.back(); }

// Channel-broadcast compatibility: b equals a, or b is the trailing channel axis.
inline bool channel_broadcast(const Shape& a, const Shape& b) {
  return b.size() == 1 && b[0] == a.back() && a != b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

inline Var add(Var a, Var b) {
  detail::require_same_graph("add", a, b);
  Graph& g = a.graph();
  const bool bcast = detail::channel_broadcast(a.shape(), b.shape());
  if (a.shape() != b.shape() && !bcast) throw shape_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value().values();
  const std::size_t c = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[bcast ? i % c : i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(out), a.needs_grad() || b.needs_grad(),
                  [ia, ib, bcast, c](Graph& gr, std::span<const double> go) {
                    gr.accumulate(ia, go);
                    if (auto* gb = gr.grad_buffer(ib)) {
                      if (bcast) {
                        for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i % c] += go[i];
                      } else {
                        for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
                      }
                    }
                  });
}

inline Var scale(Var x, double s) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  const auto ix = x.id();
  return g.record(std::move(out), x.needs_grad(), [ix, s](Graph& gr, std::span<const double> go) {
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += s * go[i];
    }
  });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var mul(Var a, Var b) {
  detail::require_same_graph("mul", a, b);
  Graph& g = a.graph();
  const bool bcast = detail::channel_broadcast(a.shape(), b.shape());
  if (a.shape() != b.shape() && !bcast) throw shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value().values();
  const std::size_t c = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[bcast ? i % c : i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(out), a.needs_grad() || b.needs_grad(),
                  [ia, ib, bcast, c](Graph& gr, std::span<const double> go) {
                    const auto& av = gr.value(ia).values();
                    const auto& bv2 = gr.value(ib).values();
                    if (auto* ga = gr.grad_buffer(ia)) {
                      for (std::size_t i = 0; i < go.size(); ++i)
                        (*ga)[i] += go[i] * bv2[bcast ? i % c : i];
                    }
                    if (auto* gb = gr.grad_buffer(ib)) {
                      for (std::size_t i = 0; i < go.size(); ++i)
                        (*gb)[bcast ? i % c : i] += go[i] * av[i];
                    }
                  });
}

inline Var relu(Var x) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const auto ix = x.id();
  return g.record(std::move(out), x.needs_grad(), [ix](Graph& gr, std::span<const double> go) {
    const auto& xv = gr.value(ix).values();
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (xv[i] > 0.0) (*gx)[i] += go[i];
      }
    }
  });
}

inline Var exp(Var x) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::exp(v);
  const auto ix = x.id();
  const auto iy = g.size();
  return g.record(std::move(out), x.needs_grad(), [ix, iy](Graph& gr, std::span<const double> go) {
    const auto& yv = gr.value(iy).values();
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * yv[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const auto ix = x.id();
  return g.record(Tensor::scalar(s), x.needs_grad(), [ix](Graph& gr, std::span<const double> go) {
    if (auto* gx = gr.grad_buffer(ix)) {
      for (auto& v : *gx) v += go[0];
    }
  });
}

inline Var squared_sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().values()) s += v * v;
  const auto ix = x.id();
  return g.record(Tensor::scalar(s), x.needs_grad(), [ix](Graph& gr, std::span<const double> go) {
    const auto& xv = gr.value(ix).values();
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += 2.0 * xv[i] * go[0];
    }
  });
}

/// Sum over every axis but the last (global sum pooling over spatial dims).
inline Var sum_spatial(Var x) {
  Graph& g = x.graph();
  const std::size_t c = x.shape().back();
  Tensor out({c});
  const auto& xv = x.value().values();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i % c] += xv[i];
  const auto ix = x.id();
  return g.record(std::move(out), x.needs_grad(), [ix, c](Graph& gr, std::span<const double> go) {
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += go[i % c];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_graph("matmul", a, b);
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw shape_error("matmul", a.shape(), b.shape());
  Graph& g = a.graph();
  Tensor out({m, n});
  detail::as_mat(out.storage(), m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), k, n);
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(out), a.needs_grad() || b.needs_grad(),
                  [ia, ib, m, k, n](Graph& gr, std::span<const double> go) {
                    auto gom = detail::as_mat(go, m, n);
                    if (auto* ga = gr.grad_buffer(ia)) {
                      detail::as_mat(*ga, m, k).noalias() +=
                          gom * detail::as_mat(gr.value(ib), k, n).transpose();
                    }
                    if (auto* gb = gr.grad_buffer(ib)) {
                      detail::as_mat(*gb, k, n).noalias() +=
                          detail::as_mat(gr.value(ia), m, k).transpose() * gom;
                    }
                  });
}

inline Var transpose(Var x) {
  detail::require_rank("transpose", x, 2);
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out({c, r});
  detail::as_mat(out.storage(), c, r) = detail::as_mat(x.value(), r, c).transpose();
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, r, c](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              detail::as_mat(*gx, r, c) += detail::as_mat(go, c, r).transpose();
                            }
                          });
}

inline Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.value().size()) throw shape_error("reshape", x.shape(), shape);
  const auto ix = x.id();
  return x.graph().record(x.value().reshaped(std::move(shape)), x.needs_grad(),
                          [ix](Graph& gr, std::span<const double> go) { gr.accumulate(ix, go); });
}

/// Affine map over rows: x [n, in] * w [in, out] (+ b [out]).
inline Var linear(Var x, Var w, Var b = {}) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0]) {
    throw shape_error("linear", x.shape(), w.shape());
  }
  Var y = matmul(x, w);
  if (b.valid()) {
    if (b.shape() != Shape{w.shape()[1]}) throw shape_error("linear(bias)", w.shape(), b.shape());
    y = add(y, b);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Convolution

/// 3x3 convolution with zero padding 1 over an H x W x Cin map. Weights are
/// laid out [3, 3, Cin, Cout]; output extent is ceil(H / stride).
inline Var conv3x3(Var x, Var w, Var b = {}, std::size_t stride = 1) {
  detail::require_same_graph("conv3x3", x, w);
  detail::require_rank("conv3x3", x, 3);
  detail::require_rank("conv3x3", w, 4);
  const std::size_t h = x.shape()[0], wd = x.shape()[1], ci = x.shape()[2];
  if (w.shape()[0] != 3 || w.shape()[1] != 3 || w.shape()[2] != ci) {
    throw shape_error("conv3x3", x.shape(), w.shape());
  }
  if (stride == 0) throw std::invalid_argument("conv3x3: stride must be positive");
  const std::size_t co = w.shape()[3];
  if (b.valid() && b.shape() != Shape{co}) throw shape_error("conv3x3(bias)", w.shape(), b.shape());
  const std::size_t ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
  const std::size_t rows = ho * wo, kc = 9 * ci;

  auto col = std::make_shared<Buffer>(rows * kc, 0.0);
  const auto& xv = x.value().values();
  for (std::size_t oh = 0; oh < ho; ++oh) {
    for (std::size_t ow = 0; ow < wo; ++ow) {
      double* dst = col->data() + (oh * wo + ow) * kc;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(oh * stride + ky) - 1;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(ow * stride + kx) - 1;
          if (ix < 0 || ix >= static_cast<long>(wd)) continue;
          const double* src = xv.data() + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          std::copy(src, src + ci, dst + (ky * 3 + kx) * ci);
        }
      }
    }
  }

  Tensor out({ho, wo, co});
  auto om = detail::as_mat(out.storage(), rows, co);
  om.noalias() = detail::as_mat(*col, rows, kc) * detail::as_mat(w.value(), kc, co);
  if (b.valid()) om.rowwise() += detail::as_mat(b.value(), 1, co).row(0);

  const auto ixd = x.id(), iw = w.id();
  const auto ib = b.valid() ? b.id() : std::size_t(-1);
  const bool needs = x.needs_grad() || w.needs_grad() || (b.valid() && b.needs_grad());
  return x.graph().record(
      std::move(out), needs,
      [=](Graph& gr, std::span<const double> go) {
        auto gom = detail::as_mat(go, rows, co);
        if (auto* gw = gr.grad_buffer(iw)) {
          detail::as_mat(*gw, kc, co).noalias() += detail::as_mat(*col, rows, kc).transpose() * gom;
        }
        if (ib != std::size_t(-1)) {
          if (auto* gb = gr.grad_buffer(ib)) {
            detail::as_mat(*gb, 1, co) += gom.colwise().sum();
          }
        }
        if (auto* gx = gr.grad_buffer(ixd)) {
          Buffer gcol(rows * kc);
          detail::as_mat(gcol, rows, kc).noalias() =
              gom * detail::as_mat(gr.value(iw), kc, co).transpose();
          for (std::size_t oh = 0; oh < ho; ++oh) {
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const double* src = gcol.data() + (oh * wo + ow) * kc;
              for (std::size_t ky = 0; ky < 3; ++ky) {
                const long iy = static_cast<long>(oh * stride + ky) - 1;
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long ix = static_cast<long>(ow * stride + kx) - 1;
                  if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                  double* dst = gx->data() + (static_cast<std::size_t>(iy) * wd + ix) * ci;
                  const double* s = src + (ky * 3 + kx) * ci;
                  for (std::size_t c = 0; c < ci; ++c) dst[c] += s[c];
                }
              }
            }
          }
        }
      });
}

/// Pointwise (1x1) convolution over an H x W x Cin map with w [Cin, Cout].
inline Var conv1x1(Var x, Var w, Var b = {}) {
  detail::require_rank("conv1x1", x, 3);
  const std::size_t h = x.shape()[0], wd = x.shape()[1];
  Var flat = reshape(x, {h * wd, x.shape()[2]});
  Var y = linear(flat, w, b);
  return reshape(y, {h, wd, w.shape()[1]});
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

// Normalizes each column of a [m, c] view (if per_column) or each row
// (otherwise). Returns the normalized values and per-group inverse std.
struct NormStats {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};

inline NormStats normalize_groups(std::span<const double> x, std::size_t m, std::size_t c,
                                  bool per_column, double eps) {
  NormStats s{std::vector<double>(x.size()), {}};
  const std::size_t groups = per_column ? c : m;
  const std::size_t len = per_column ? m : c;
  s.inv_std.resize(groups);
  auto idx = [&](std::size_t grp, std::size_t k) {
    return per_column ? k * c + grp : grp * c + k;
  };
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double mean = 0.0;
    for (std::size_t k = 0; k < len; ++k) mean += x[idx(grp, k)];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double d = x[idx(grp, k)] - mean;
      var += d * d;
    }
    var /= static_cast<double>(len);
    const double inv = 1.0 / std::sqrt(var + eps);
    s.inv_std[grp] = inv;
    for (std::size_t k = 0; k < len; ++k) s.xhat[idx(grp, k)] = (x[idx(grp, k)] - mean) * inv;
  }
  return s;
}

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) per group.
inline void normalize_backward(std::span<const double> dxhat, const NormStats& s, std::size_t m,
                               std::size_t c, bool per_column, Buffer& gx) {
  const std::size_t groups = per_column ? c : m;
  const std::size_t len = per_column ? m : c;
  auto idx = [&](std::size_t grp, std::size_t k) {
    return per_column ? k * c + grp : grp * c + k;
  };
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = idx(grp, k);
      mean_d += dxhat[i];
      mean_dx += dxhat[i] * s.xhat[i];
    }
    mean_d /= static_cast<double>(len);
    mean_dx /= static_cast<double>(len);
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = idx(grp, k);
      gx[i] += s.inv_std[grp] * (dxhat[i] - mean_d - s.xhat[i] * mean_dx);
    }
  }
}

}  // namespace detail

/// LayerNorm over the channel (last) axis of x [n, C] with affine gamma/beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  detail::require_rank("layer_norm", x, 2);
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (gamma.shape() != Shape{c}) throw shape_error("layer_norm(gamma)", x.shape(), gamma.shape());
  if (beta.shape() != Shape{c}) throw shape_error("layer_norm(beta)", x.shape(), beta.shape());
  auto stats = std::make_shared<detail::NormStats>(
      detail::normalize_groups(x.value().values(), n, c, false, eps));
  Tensor xhat({n, c}, stats->xhat);
  const auto ix = x.id();
  Var normed = x.graph().record(std::move(xhat), x.needs_grad(),
                                [ix, stats, n, c](Graph& gr, std::span<const double> go) {
                                  if (auto* gx = gr.grad_buffer(ix)) {
                                    detail::normalize_backward(go, *stats, n, c, false, *gx);
                                  }
                                });
  return add(mul(normed, gamma), beta);
}

/// Per-channel normalization over all leading (spatial) axes, no affine.
inline Var instance_norm(Var x, double eps = 1e-5) {
  const std::size_t c = x.shape().back();
  const std::size_t m = x.value().size() / c;
  auto stats = std::make_shared<detail::NormStats>(
      detail::normalize_groups(x.value().values(), m, c, true, eps));
  Tensor out(x.shape(), stats->xhat);
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, stats, m, c](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              detail::normalize_backward(go, *stats, m, c, true, *gx);
                            }
                          });
}

// ---------------------------------------------------------------------------
// Layout

/// Concatenation along the last (channel) axis.
inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) throw shape_error("concat_channels", parts[0].shape(), p.shape());
    widths.push_back(p.shape().back());
    total += p.shape().back();
    needs = needs || p.needs_grad();
  }
  const std::size_t rows = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t off = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value().values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k], out.storage().data() + r * total + off);
    }
    off += widths[k];
    ids.push_back(parts[k].id());
  }
  return parts[0].graph().record(
      std::move(out), needs, [ids, widths, rows, total](Graph& gr, std::span<const double> go) {
        std::size_t o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (auto* gp = gr.grad_buffer(ids[k])) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[k]; ++j) (*gp)[r * widths[k] + j] += go[r * total + o + j];
            }
          }
          o += widths[k];
        }
      });
}

/// Columns [begin, end) of a 2-D tensor.
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", x, 2);
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.value().at(i, begin + j);
  }
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, r, c, w, begin](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < w; ++j) (*gx)[i * c + begin + j] += go[i * w + j];
                            }
                          });
}

/// Rows [begin, end) along the first axis.
inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.shape()[0];
  if (begin >= end || end > n) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + shape_str(x.shape()));
  }
  const std::size_t stride = x.value().size() / n;
  Shape s = x.shape();
  s[0] = end - begin;
  Tensor out(s, Buffer(x.value().values().begin() + begin * stride,
                     x.value().values().begin() + end * stride));
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, begin, stride](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              for (std::size_t i = 0; i < go.size(); ++i) (*gx)[begin * stride + i] += go[i];
                            }
                          });
}

/// Column-wise maximum over rows: [n, C] -> [1, C]. Ties route to the first row.
inline Var max_rows(Var x) {
  detail::require_rank("max_rows", x, 2);
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor out({1, c});
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    double best = x.value().at(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      if (x.value().at(i, j) > best) {
        best = x.value().at(i, j);
        arg[j] = i;
      }
    }
    out[j] = best;
  }
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, arg, c](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              for (std::size_t j = 0; j < c; ++j) (*gx)[arg[j] * c + j] += go[j];
                            }
                          });
}

/// Tiles a [1, C] row n times.
inline Var repeat_rows(Var x, std::size_t n) {
  detail::require_rank("repeat_rows", x, 2);
  if (x.shape()[0] != 1) throw ShapeError("repeat_rows: expected one row, got " + shape_str(x.shape()));
  const std::size_t c = x.shape()[1];
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.value().values().data(), c, out.storage().data() + i * c);
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(), [ix, c](Graph& gr, std::span<const double> go) {
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i % c] += go[i];
    }
  });
}

/// Nearest-neighbour resize of an H x W x C map.
inline Var resize_nearest(Var x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank("resize_nearest", x, 3);
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  std::vector<std::size_t> src(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t q = 0; q < out_w; ++q) {
      src[r * out_w + q] = (r * h / out_h) * w + (q * w / out_w);
    }
  }
  Tensor out({out_h, out_w, c});
  for (std::size_t k = 0; k < src.size(); ++k) {
    std::copy_n(x.value().values().data() + src[k] * c, c, out.storage().data() + k * c);
  }
  const auto ix = x.id();
  return x.graph().record(std::move(out), x.needs_grad(), [ix, src, c](Graph& gr, std::span<const double> go) {
    if (auto* gx = gr.grad_buffer(ix)) {
      for (std::size_t k = 0; k < src.size(); ++k)
        for (std::size_t j = 0; j < c; ++j) (*gx)[src[k] * c + j] += go[k * c + j];
    }
  });
}

inline Var detach(Var x) { return x.graph().detach(x); }

// ---------------------------------------------------------------------------
// Attention softmax

/// Softmax of scores / tau with max subtraction. Rejects non-finite input.
inline std::vector<double> softmax_scaled(std::span<const double> scores, double tau) {
  if (scores.empty()) throw std::invalid_argument("softmax_scaled: empty input");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("softmax_scaled: tau must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("softmax_scaled: non-finite score");
    mx = std::max(mx, s);
  }
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - mx) / tau);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

/// Row-wise softmax_scaled over a [n, k] score matrix.
inline Var softmax_rows(Var x, double tau) {
  detail::require_rank("softmax_rows", x, 2);
  const std::size_t n = x.shape()[0], k = x.shape()[1];
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = softmax_scaled(x.value().values().subspan(i * k, k), tau);
    std::copy(row.begin(), row.end(), out.storage().begin() + i * k);
  }
  const auto ix = x.id();
  auto y = std::make_shared<Buffer>(out.storage());
  return x.graph().record(std::move(out), x.needs_grad(),
                          [ix, y, n, k, tau](Graph& gr, std::span<const double> go) {
                            if (auto* gx = gr.grad_buffer(ix)) {
                              for (std::size_t i = 0; i < n; ++i) {
                                double dot = 0.0;
                                for (std::size_t j = 0; j < k; ++j) dot += go[i * k + j] * (*y)[i * k + j];
                                for (std::size_t j = 0; j < k; ++j)
                                  (*gx)[i * k + j] += (*y)[i * k + j] * (go[i * k + j] - dot) / tau;
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// Detection losses

namespace detail {
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace detail

/// Sigmoid focal loss summed over a [M, K] logit matrix. `labels[m]` is the
/// foreground class of location m or K for background.
inline Var focal_loss_sum(Var logits, const std::vector<int>& labels, double alpha = 0.25,
                          double gamma = 2.0) {
  detail::require_rank("focal_loss", logits, 2);
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != m) {
    throw ShapeError("focal_loss: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const auto& x = logits.value().values();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const double z = x[i * k + c];
      const double p = detail::sigmoid(z);
      if (labels[i] == static_cast<int>(c)) {
        total += alpha * std::pow(1.0 - p, gamma) * detail::softplus(-z);
      } else {
        total += (1.0 - alpha) * std::pow(p, gamma) * detail::softplus(z);
      }
    }
  }
  const auto ix = logits.id();
  return logits.graph().record(
      Tensor::scalar(total), logits.needs_grad(),
      [ix, labels, m, k, alpha, gamma](Graph& gr, std::span<const double> go) {
        auto* gx = gr.grad_buffer(ix);
        if (!gx) return;
        const auto& xv = gr.value(ix).values();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t c = 0; c < k; ++c) {
            const double z = xv[i * k + c];
            const double p = detail::sigmoid(z);
            double d;
            if (labels[i] == static_cast<int>(c)) {
              // d/dz [-a (1-p)^g ln p] = a (1-p)^g (g p ln p - (1-p))
              d = alpha * std::pow(1.0 - p, gamma) * (-gamma * p * detail::softplus(-z) - (1.0 - p));
            } else {
              // d/dz [-(1-a) p^g ln(1-p)] = (1-a) p^g (p - g (1-p) ln(1-p))
              d = (1.0 - alpha) * std::pow(p, gamma) * (p + gamma * (1.0 - p) * detail::softplus(z));
            }
            (*gx)[i * k + c] += go[0] * d;
          }
        }
      });
}

/// -ln(IoU) between predicted and target (left, top, right, bottom) distance
/// boxes anchored at the same point, summed over rows with `positive[m]` set.
/// Predictions must be strictly positive.
inline Var iou_loss_sum(Var pred, const Tensor& target, const std::vector<std::uint8_t>& positive) {
  detail::require_rank("iou_loss", pred, 2);
  if (pred.shape() != target.shape() || pred.shape()[1] != 4) {
    throw shape_error("iou_loss", pred.shape(), target.shape());
  }
  const std::size_t m = pred.shape()[0];
  if (positive.size() != m) throw ShapeError("iou_loss: mask length mismatch for " + shape_str(pred.shape()));
  const auto& p = pred.value().values();
  const auto& t = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!positive[i]) continue;
    const double* a = p.data() + 4 * i;
    const double* b = t.data() + 4 * i;
    const double iw = std::min(a[0], b[0]) + std::min(a[2], b[2]);
    const double ih = std::min(a[1], b[1]) + std::min(a[3], b[3]);
    const double inter = iw * ih;
    const double area_a = (a[0] + a[2]) * (a[1] + a[3]);
    const double area_b = (b[0] + b[2]) * (b[1] + b[3]);
    total += -std::log(inter) + std::log(area_a + area_b - inter);
  }
  const auto ip = pred.id();
  auto tgt = std::make_shared<Tensor>(target);
  return pred.graph().record(
      Tensor::scalar(total), pred.needs_grad(), [ip, tgt, positive, m](Graph& gr, std::span<const double> go) {
        auto* gp = gr.grad_buffer(ip);
        if (!gp) return;
        const auto& pv = gr.value(ip).values();
        const auto& tv = tgt->values();
        for (std::size_t i = 0; i < m; ++i) {
          if (!positive[i]) continue;
          const double* a = pv.data() + 4 * i;
          const double* b = tv.data() + 4 * i;
          const double iw = std::min(a[0], b[0]) + std::min(a[2], b[2]);
          const double ih = std::min(a[1], b[1]) + std::min(a[3], b[3]);
          const double inter = iw * ih;
          const double area_a = (a[0] + a[2]) * (a[1] + a[3]);
          const double uni = area_a + (b[0] + b[2]) * (b[1] + b[3]) - inter;
          // loss = -ln(I) + ln(U), U = A + B - I.
          const double d_inter = -1.0 / inter - 1.0 / uni;
          const double d_area = 1.0 / uni;
          const double dI[4] = {a[0] < b[0] ? ih : 0.0, a[1] < b[1] ? iw : 0.0, a[2] < b[2] ? ih : 0.0,
                                a[3] < b[3] ? iw : 0.0};
          const double dA[4] = {a[1] + a[3], a[0] + a[2], a[1] + a[3], a[0] + a[2]};
          for (int j = 0; j < 4; ++j) (*gp)[4 * i + j] += go[0] * (d_inter * dI[j] + d_area * dA[j]);
        }
      });
}

}  // namespace lgd
