#pragma once

// Tiny anchor-free student: strided conv backbone, two-level FPN-lite,
// shared classification/regression head, centre-sampling target assignment,
// focal + IoU detection loss and NMS decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/config.hpp"
#include "lgd/layers.hpp"
#include "lgd/ops.hpp"
#include "lgd/params.hpp"
#include "lgd/scene.hpp"

namespace lgd {

struct LevelGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 0;
  double min_size = 0.0;  // longer-side range (pixels) for assignment
  double max_size = 0.0;
};

/// Level extents for an image, rejecting sizes not divisible by the largest stride.
inline std::vector<LevelGeometry> pyramid_geometry(std::size_t image_h, std::size_t image_w,
                                                   const DetectorConfig& cfg) {
  const std::size_t top = kStrides.back();
  if (image_h % top != 0 || image_w % top != 0) {
    throw std::invalid_argument("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                                " not divisible by stride " + std::to_string(top));
  }
  std::vector<LevelGeometry> out;
  for (std::size_t p = 0; p < kStrides.size(); ++p) {
    const auto s = kStrides[p];
    out.push_back({(image_h + s - 1) / s, (image_w + s - 1) / s, s, p == 0 ? 0.0 : cfg.level_split,
                   p + 1 == kStrides.size() ? std::numeric_limits<double>::infinity() : cfg.level_split});
  }
  return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>> level_dims(const std::vector<LevelGeometry>& geo) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& l : geo) out.emplace_back(l.height, l.width);
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

inline void init_backbone(ParameterStore& store, const DetectorConfig& cfg, Rng& rng) {
  std::size_t cin = 3;
  for (std::size_t i = 0; i < cfg.backbone_widths.size(); ++i) {
    const auto w = static_cast<std::size_t>(cfg.backbone_widths[i]);
    add_conv3x3(store, "student.backbone.b" + std::to_string(i + 1), cin, w, rng);
    cin = w;
  }
  const auto c = static_cast<std::size_t>(cfg.channels);
  add_linear(store, "student.fpn.lat1", static_cast<std::size_t>(cfg.backbone_widths[2]), c, rng);
  add_linear(store, "student.fpn.lat2", static_cast<std::size_t>(cfg.backbone_widths[3]), c, rng);
}

/// Head parameters under `prefix` (e.g. "head"). The two predictor convs
/// start from N(0, 0.01^2) weights so exp() on the regression branch begins
/// near 1; the classification bias encodes a foreground prior of `prior`.
inline void init_head(ParameterStore& store, const std::string& prefix, const DetectorConfig& cfg, Rng& rng,
                      double prior = 0.01) {
  const auto c = static_cast<std::size_t>(cfg.channels);
  add_conv3x3(store, prefix + ".tower", c, c, rng);
  add_conv3x3(store, prefix + ".cls", c, static_cast<std::size_t>(cfg.num_classes), rng);
  add_conv3x3(store, prefix + ".reg", c, 4, rng);
  for (const char* out : {".cls.w", ".reg.w"}) {
    for (auto& v : store.get(prefix + out).values()) v = 0.01 * rng.normal();
  }
  auto& b = store.get(prefix + ".cls.b");
  for (auto& v : b.values()) v = -std::log((1.0 - prior) / prior);
}

// ---------------------------------------------------------------------------
// Forward

struct FeaturePyramid {
  std::vector<Var> maps;  // H_p x W_p x C
  std::vector<std::size_t> strides;
};

inline FeaturePyramid forward_backbone(Graph& g, ParameterStore& store, const Tensor& image,
                                       const DetectorConfig& cfg) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("forward_backbone: expected H x W x 3 image, got " + shape_str(image.shape()));
  }
  pyramid_geometry(image.dim(0), image.dim(1), cfg);  // validates divisibility
  Var x = g.constant(image);
  std::vector<Var> stages;
  for (std::size_t i = 0; i < cfg.backbone_widths.size(); ++i) {
    x = relu(apply_conv3x3(g, store, "student.backbone.b" + std::to_string(i + 1), x, 2));
    stages.push_back(x);
  }
  Var top = apply_conv1x1(g, store, "student.fpn.lat2", stages[3]);
  Var lat = apply_conv1x1(g, store, "student.fpn.lat1", stages[2]);
  Var fine = add(lat, resize_nearest(top, lat.shape()[0], lat.shape()[1]));
  return {{fine, top}, {kStrides[0], kStrides[1]}};
}

struct HeadLevel {
  Var logits;      // [H_p * W_p, K]
  Var regression;  // [H_p * W_p, 4], positive distances in stride units
};
using HeadOutput = std::vector<HeadLevel>;

/// Applies the head stored under `prefix` to every level of `maps`.
inline HeadOutput detection_head(Graph& g, ParameterStore& store, const std::string& prefix,
                                 const std::vector<Var>& maps) {
  HeadOutput out;
  for (const Var& m : maps) {
    const std::size_t cells = m.shape()[0] * m.shape()[1];
    Var t = relu(apply_conv3x3(g, store, prefix + ".tower", m));
    Var cls = apply_conv3x3(g, store, prefix + ".cls", t);
    Var reg = exp(apply_conv3x3(g, store, prefix + ".reg", t));
    out.push_back({reshape(cls, {cells, cls.shape()[2]}), reshape(reg, {cells, 4})});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Targets and loss

struct LevelTargets {
  std::vector<int> labels;           // class per location, K = background
  Tensor regression;                 // [cells, 4] (l, t, r, b) / stride; zero where negative
  std::vector<std::uint8_t> positive;
};
using TargetMap = std::vector<LevelTargets>;

/// A location is positive iff its cell centre lies strictly inside a box whose
/// longer side falls in the level's size range; the smallest such box wins.
inline TargetMap assign_targets(const std::vector<Annotation>& anns, const std::vector<LevelGeometry>& geo,
                                std::size_t image_h, std::size_t image_w, int num_classes) {
  TargetMap out;
  for (const auto& lvl : geo) {
    const std::size_t cells = lvl.height * lvl.width;
    LevelTargets t{std::vector<int>(cells, num_classes), Tensor({cells, 4}), std::vector<std::uint8_t>(cells, 0)};
    for (std::size_t r = 0; r < lvl.height; ++r) {
      for (std::size_t c = 0; c < lvl.width; ++c) {
        const double px = (c + 0.5) * lvl.stride, py = (r + 0.5) * lvl.stride;
        double best_area = std::numeric_limits<double>::infinity();
        for (const auto& a : anns) {
          const double x1 = a.box.x1 * image_w, y1 = a.box.y1 * image_h;
          const double x2 = a.box.x2 * image_w, y2 = a.box.y2 * image_h;
          const double l = px - x1, tp = py - y1, rt = x2 - px, bt = y2 - py;
          if (!(l > 0 && tp > 0 && rt > 0 && bt > 0)) continue;
          const double longer = std::max(x2 - x1, y2 - y1);
          if (longer < lvl.min_size || longer > lvl.max_size) continue;
          if (lvl.min_size > 0 && longer <= lvl.min_size) continue;  // (min, max] above level 1
          const double area = (x2 - x1) * (y2 - y1);
          if (area >= best_area) continue;
          best_area = area;
          const std::size_t k = r * lvl.width + c;
          t.labels[k] = a.category;
          t.positive[k] = 1;
          const double s = static_cast<double>(lvl.stride);
          t.regression.at(k, 0) = l / s;
          t.regression.at(k, 1) = tp / s;
          t.regression.at(k, 2) = rt / s;
          t.regression.at(k, 3) = bt / s;
        }
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::size_t count_positives(const TargetMap& targets) {
  std::size_t n = 0;
  for (const auto& t : targets) n += static_cast<std::size_t>(std::count(t.positive.begin(), t.positive.end(), 1));
  return n;
}

/// Focal loss over all locations plus -ln(IoU) over positive locations,
/// both normalised by max(1, #positives).
inline Var detection_loss(const HeadOutput& out, const TargetMap& targets, double alpha = 0.25, double gamma = 2.0) {
  if (out.size() != targets.size() || out.empty()) {
    throw ShapeError("detection_loss: " + std::to_string(out.size()) + " head levels vs " +
                     std::to_string(targets.size()) + " target levels");
  }
  const double norm = std::max<double>(1.0, static_cast<double>(count_positives(targets)));
  Var total;
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (out[p].logits.shape()[0] != targets[p].labels.size()) {
      throw shape_error("detection_loss", out[p].logits.shape(), targets[p].regression.shape());
    }
    Var term = add(focal_loss_sum(out[p].logits, targets[p].labels, alpha, gamma),
                   iou_loss_sum(out[p].regression, targets[p].regression, targets[p].positive));
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, 1.0 / norm);
}

// ---------------------------------------------------------------------------
// Decoding

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
};

/// Per-class greedy NMS: keeps the highest-scoring box and drops any box of
/// the same class overlapping a kept one by IoU > nms_iou.
inline std::vector<Detection> nms(std::vector<Detection> dets, double nms_iou) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.category == d.category && iou(k.box, d.box) > nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct DecodeOptions {
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  std::size_t max_detections = 100;
};

/// Decodes raw head values (logits [cells, K], regression [cells, 4]) per level.
inline std::vector<Detection> decode_detections(const std::vector<std::pair<Tensor, Tensor>>& levels,
                                                const std::vector<LevelGeometry>& geo, std::size_t image_h,
                                                std::size_t image_w, const DecodeOptions& opt = {}) {
  std::vector<Detection> cands;
  for (std::size_t p = 0; p < levels.size(); ++p) {
    const auto& [logits, reg] = levels[p];
    const auto& lvl = geo[p];
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < lvl.height; ++r) {
      for (std::size_t c = 0; c < lvl.width; ++c) {
        const std::size_t cell = r * lvl.width + c;
        const double px = (c + 0.5) * lvl.stride, py = (r + 0.5) * lvl.stride;
        const double s = static_cast<double>(lvl.stride);
        Box b{(px - reg.at(cell, 0) * s) / image_w, (py - reg.at(cell, 1) * s) / image_h,
              (px + reg.at(cell, 2) * s) / image_w, (py + reg.at(cell, 3) * s) / image_h};
        b = {std::clamp(b.x1, 0.0, 1.0), std::clamp(b.y1, 0.0, 1.0), std::clamp(b.x2, 0.0, 1.0),
             std::clamp(b.y2, 0.0, 1.0)};
        if (!(b.x2 > b.x1 && b.y2 > b.y1)) continue;
        for (std::size_t cls = 0; cls < k; ++cls) {
          const double score = detail::sigmoid(logits.at(cell, cls));
          if (score > opt.score_thresh) cands.push_back({b, static_cast<int>(cls), score});
        }
      }
    }
  }
  auto kept = nms(std::move(cands), opt.nms_iou);
  if (kept.size() > opt.max_detections) kept.resize(opt.max_detections);
  return kept;
}

inline std::vector<Detection> decode_detections(const HeadOutput& out, const std::vector<LevelGeometry>& geo,
                                                std::size_t image_h, std::size_t image_w,
                                                const DecodeOptions& opt = {}) {
  std::vector<std::pair<Tensor, Tensor>> levels;
  for (const auto& l : out) levels.emplace_back(l.logits.value(), l.regression.value());
  return decode_detections(levels, geo, image_h, image_w, opt);
}

}  // namespace lgd
