#pragma once

// Composition of the student detector with the label-guided branch for one
// scene, plus the student-only inference path.

#include <optional>
#include <string>
#include <vector>

#include "lgd/attention.hpp"
#include "lgd/config.hpp"
#include "lgd/detector.hpp"
#include "lgd/encoder.hpp"
#include "lgd/mapper.hpp"
#include "lgd/serialize.hpp"

namespace lgd {

enum class Mode { kBaseline, kLgd };

inline std::string to_string(Mode m) { return m == Mode::kBaseline ? "baseline" : "lgd"; }
inline Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::kBaseline;
  if (s == "lgd") return Mode::kLgd;
  throw std::invalid_argument("unknown mode: " + s);
}

struct ModelConfig {
  DetectorConfig detector;
  LgdConfig lgd;
  Mode mode = Mode::kLgd;
};

/// Prefix of the head applied to the instructive pyramid.
inline std::string instructive_head(const ModelConfig& cfg) {
  return cfg.lgd.head_sharing ? "head" : "lgd.head";
}

inline void init_model(ParameterStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(stream_seed(seed, "init"));
  init_backbone(store, cfg.detector, rng);
  init_head(store, "head", cfg.detector, rng);
  if (cfg.mode == Mode::kBaseline) return;
  const int c = cfg.detector.channels;
  init_label_encoder(store, cfg.lgd, cfg.detector.num_classes, c, rng);
  init_projections(store, kStrides.size(), c, rng);
  init_attention(store, c, rng);
  init_mapper(store, c, rng);
  init_adapter(store, c, rng);
  if (!cfg.lgd.head_sharing) init_head(store, "lgd.head", cfg.detector, rng);
}

struct LgdForward {
  Var labels;                            // L
  std::vector<Var> appearance;           // A_p
  std::vector<AttentionResult> attention;  // E_p and weights
  std::vector<Var> instructive;          // X_p^I
  std::vector<Var> adapted;              // X_p^S
};

struct SceneForward {
  std::vector<LevelGeometry> geometry;
  FeaturePyramid pyramid;
  HeadOutput student;
  TargetMap targets;
  Var det_student;
  std::optional<LgdForward> lgd;
  HeadOutput instructive_head;
  Var det_instructive;
  Var distill;  // invalid unless requested
};

/// Builds the label-guided branch for one scene on top of a student pyramid.
inline LgdForward forward_lgd(Graph& g, ParameterStore& store, const ModelConfig& cfg, const Scene& scene,
                              const FeaturePyramid& pyramid, const std::vector<LevelGeometry>& geo,
                              bool with_adapted) {
  LgdForward out;
  const MaskPyramid masks = build_mask_pyramid(scene.annotations, level_dims(geo));
  out.labels = encode_labels(g, store, g.constant(build_descriptors(scene.annotations, cfg.detector.num_classes)),
                             cfg.lgd);
  for (std::size_t p = 0; p < pyramid.maps.size(); ++p) {
    Var projected = project_features(g, store, p, pyramid.maps[p]);
    out.appearance.push_back(mask_pool(projected, masks[p]));
    out.attention.push_back(cross_attention(g, store, out.appearance.back(), out.labels, cfg.lgd));
    out.instructive.push_back(map_knowledge(g, store, out.attention.back().embeddings, masks[p], geo[p].height,
                                            geo[p].width, cfg.lgd.context_participation));
    if (with_adapted) out.adapted.push_back(adapt_student(g, store, pyramid.maps[p]));
  }
  return out;
}

/// Full training-time forward pass for one scene.
inline SceneForward forward_scene(Graph& g, ParameterStore& store, const ModelConfig& cfg, const Scene& scene,
                                  bool with_distill) {
  SceneForward f;
  const std::size_t h = scene.image.dim(0), w = scene.image.dim(1);
  f.geometry = pyramid_geometry(h, w, cfg.detector);
  f.pyramid = forward_backbone(g, store, scene.image, cfg.detector);
  f.student = detection_head(g, store, "head", f.pyramid.maps);
  f.targets = assign_targets(scene.annotations, f.geometry, h, w, cfg.detector.num_classes);
  f.det_student = detection_loss(f.student, f.targets);
  if (cfg.mode == Mode::kBaseline) return f;

  f.lgd = forward_lgd(g, store, cfg, scene, f.pyramid, f.geometry, with_distill);
  f.instructive_head = detection_head(g, store, instructive_head(cfg), f.lgd->instructive);
  f.det_instructive = detection_loss(f.instructive_head, f.targets);
  if (with_distill) f.distill = distill_loss(f.lgd->adapted, f.lgd->instructive);
  return f;
}

/// Inference through the student alone; touches only "student.*" and "head.*".
inline std::vector<Detection> predict(ParameterStore& store, const DetectorConfig& cfg, const Tensor& image,
                                      const DecodeOptions& opt = {}) {
  Graph g;
  const auto geo = pyramid_geometry(image.dim(0), image.dim(1), cfg);
  auto pyr = forward_backbone(g, store, image, cfg);
  auto out = detection_head(g, store, "head", pyr.maps);
  return decode_detections(out, geo, image.dim(0), image.dim(1), opt);
}

inline bool is_student_tensor(const std::string& name) {
  return has_prefix(name, "student.") || has_prefix(name, "head.");
}

/// Recovers detector hyper-parameters from student tensor shapes.
inline DetectorConfig infer_detector_config(const ParameterStore& store, double level_split = 32.0) {
  DetectorConfig cfg;
  for (std::size_t i = 0; i < cfg.backbone_widths.size(); ++i) {
    cfg.backbone_widths[i] =
        static_cast<int>(store.get("student.backbone.b" + std::to_string(i + 1) + ".w").dim(3));
  }
  cfg.channels = static_cast<int>(store.get("student.fpn.lat1.w").dim(1));
  cfg.num_classes = static_cast<int>(store.get("head.cls.w").dim(3));
  cfg.level_split = level_split;
  return cfg;
}

inline ParameterStore store_from_tensors(const std::vector<NamedTensor>& tensors,
                                         const std::function<bool(const std::string&)>& keep = {}) {
  ParameterStore store;
  for (const auto& [name, t] : tensors) {
    if (!keep || keep(name)) store.add(name, t);
  }
  return store;
}

}  // namespace lgd
