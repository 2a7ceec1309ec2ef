#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/random.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

/// Normalized corner box (x1, y1, x2, y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct Annotation {
  Box box;
  int category = 0;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Synthetic shapes generator settings.
struct GenConfig {
  int height = 64;
  int width = 64;
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 5;
  int min_size = 8;   // pixels
  int max_size = 40;  // pixels
  int max_annotations = 8;
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GenConfig& g) {
  j = {{"height", g.height},         {"width", g.width},       {"num_classes", g.num_classes},
       {"min_objects", g.min_objects}, {"max_objects", g.max_objects}, {"min_size", g.min_size},
       {"max_size", g.max_size},     {"max_annotations", g.max_annotations}};
}

inline void from_json(const nlohmann::json& j, GenConfig& g) {
  static const std::array<const char*, 8> keys = {"height",   "width",    "num_classes",
                                                   "min_objects", "max_objects", "min_size",
                                                   "max_size", "max_annotations"};
  for (const auto& [k, _] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw std::invalid_argument("unknown generator key: " + k);
    }
  }
  g.height = j.value("height", g.height);
  g.width = j.value("width", g.width);
  g.num_classes = j.value("num_classes", g.num_classes);
  g.min_objects = j.value("min_objects", g.min_objects);
  g.max_objects = j.value("max_objects", g.max_objects);
  g.min_size = j.value("min_size", g.min_size);
  g.max_size = j.value("max_size", g.max_size);
  g.max_annotations = j.value("max_annotations", g.max_annotations);
}

inline void validate(const GenConfig& g) {
  if (g.height <= 0 || g.width <= 0) throw std::invalid_argument("generator: image size must be positive");
  if (g.num_classes <= 0) throw std::invalid_argument("generator: num_classes must be positive");
  if (g.min_objects < 0 || g.max_objects < g.min_objects || g.max_objects > g.max_annotations) {
    throw std::invalid_argument("generator: object count range invalid");
  }
  if (g.min_size < 2 || g.max_size < g.min_size || g.max_size > std::min(g.height, g.width)) {
    throw std::invalid_argument("generator: object size range invalid");
  }
}

struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  GenConfig gen;
  Tensor image;  // H x W x 3 in [0, 1]
  std::vector<Annotation> annotations;
};

/// Annotation-only view of a scene, as stored in dataset files.
struct SceneRecord {
  std::string id;
  std::uint64_t seed = 0;
  GenConfig gen;
  std::vector<Annotation> annotations;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string validate_annotations(const std::vector<Annotation>& anns, const GenConfig& gen) {
  if (static_cast<int>(anns.size()) > gen.max_annotations) return "too many annotations";
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& a = anns[i];
    const auto& b = a.box;
    const bool finite = std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2);
    if (!finite || b.x1 < 0 || b.y1 < 0 || b.x2 > 1 || b.y2 > 1) {
      return "annotation " + std::to_string(i) + " box outside [0,1]";
    }
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) return "annotation " + std::to_string(i) + " has x1>=x2 or y1>=y2";
    if (a.category < 0 || a.category >= gen.num_classes) {
      return "annotation " + std::to_string(i) + " category out of range";
    }
  }
  return {};
}

namespace detail {

enum class ShapeKind { kRectangle = 0, kDisc = 1, kTriangle = 2 };

inline bool inside_shape(ShapeKind kind, double px, double py, double x0, double y0, double w, double h) {
  switch (kind) {
    case ShapeKind::kRectangle:
      return px >= x0 && px < x0 + w && py >= y0 && py < y0 + h;
    case ShapeKind::kDisc: {
      const double cx = x0 + w / 2, cy = y0 + h / 2, r = w / 2;
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    }
    case ShapeKind::kTriangle: {
      // Apex at top centre, base along the bottom edge.
      if (py < y0 || py > y0 + h) return false;
      const double t = (py - y0) / h;
      const double half = t * w / 2;
      const double cx = x0 + w / 2;
      return px >= cx - half && px <= cx + half;
    }
  }
  return false;
}

}  // namespace detail

/// Renders a deterministic scene of coloured shapes on a textured background.
/// The shape drawn for an object is category % 3 (rectangle, disc, triangle);
/// boxes are the tight pixel bounds of each rendered shape.
inline Scene generate_scene(std::uint64_t seed, const GenConfig& gen) {
  validate(gen);
  Rng rng(stream_seed(seed, "scene"));
  const auto H = static_cast<std::size_t>(gen.height), W = static_cast<std::size_t>(gen.width);
  Scene s;
  s.id = "s" + std::to_string(seed);
  s.seed = seed;
  s.gen = gen;
  s.image = Tensor({H, W, 3});

  std::array<double, 3> base;
  for (auto& b : base) b = rng.uniform(0.15, 0.45);
  const double fx = rng.uniform(0.1, 0.6), fy = rng.uniform(0.1, 0.6), phase = rng.uniform(0, 6.28);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double stripe = 0.06 * std::sin(fx * x + fy * y + phase);
      for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = base[c] + stripe + rng.uniform(-0.05, 0.05);
    }
  }

  const int count = static_cast<int>(rng.uniform_int(gen.min_objects, gen.max_objects));
  std::vector<std::uint8_t> occupied(H * W, 0);
  for (int obj = 0; obj < count; ++obj) {
    const int category = static_cast<int>(rng.uniform_int(0, gen.num_classes - 1));
    const auto kind = static_cast<detail::ShapeKind>(category % 3);
    std::array<double, 3> color;
    for (auto& c : color) c = rng.uniform(0.55, 1.0);

    // Retry placement a few times to keep heavy overlap rare.
    Box box;
    std::vector<std::size_t> pixels;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double w = static_cast<double>(rng.uniform_int(gen.min_size, gen.max_size));
      const double h = kind == detail::ShapeKind::kDisc ? w : static_cast<double>(rng.uniform_int(gen.min_size, gen.max_size));
      const double x0 = static_cast<double>(rng.uniform_int(0, gen.width - static_cast<int>(w)));
      const double y0 = static_cast<double>(rng.uniform_int(0, gen.height - static_cast<int>(h)));
      pixels.clear();
      std::size_t minx = W, miny = H, maxx = 0, maxy = 0;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          if (detail::inside_shape(kind, x + 0.5, y + 0.5, x0, y0, w, h)) {
            pixels.push_back(y * W + x);
            minx = std::min(minx, x);
            maxx = std::max(maxx, x);
            miny = std::min(miny, y);
            maxy = std::max(maxy, y);
          }
        }
      }
      if (pixels.empty()) continue;
      box = {static_cast<double>(minx) / W, static_cast<double>(miny) / H, static_cast<double>(maxx + 1) / W,
             static_cast<double>(maxy + 1) / H};
      bool clash = false;
      for (const auto& a : s.annotations) clash = clash || iou(a.box, box) > 0.3;
      if (!clash) break;
      pixels.clear();
    }
    if (pixels.empty()) continue;
    for (auto p : pixels) {
      for (std::size_t c = 0; c < 3; ++c) s.image[p * 3 + c] = color[c];
    }
    s.annotations.push_back({box, category});
  }
  for (auto& v : s.image.values()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

// ---------------------------------------------------------------------------
// Masks

/// Binary H_p x W_p mask: a cell is set iff its centre lies in the half-open
/// box [x1, x2) x [y1, y2). An otherwise empty mask gets the single cell
/// containing the box centre.
inline Tensor rasterize_mask(const Box& box, std::size_t hp, std::size_t wp) {
  Tensor m({hp, wp});
  bool any = false;
  for (std::size_t r = 0; r < hp; ++r) {
    const double cy = (r + 0.5) / static_cast<double>(hp);
    if (cy < box.y1 || cy >= box.y2) continue;
    for (std::size_t c = 0; c < wp; ++c) {
      const double cx = (c + 0.5) / static_cast<double>(wp);
      if (cx >= box.x1 && cx < box.x2) {
        m.at(r, c) = 1.0;
        any = true;
      }
    }
  }
  if (!any) {
    const double cx = (box.x1 + box.x2) / 2, cy = (box.y1 + box.y2) / 2;
    const auto c = std::min(static_cast<std::size_t>(std::max(0.0, cx) * wp), wp - 1);
    const auto r = std::min(static_cast<std::size_t>(std::max(0.0, cy) * hp), hp - 1);
    m.at(r, c) = 1.0;
  }
  return m;
}

inline constexpr Box kContextBox{0.0, 0.0, 1.0, 1.0};

/// Masks for one pyramid level stacked as rows: [(N + 1), H_p * W_p], row 0
/// being the all-ones context mask.
inline Tensor level_masks(const std::vector<Annotation>& anns, std::size_t hp, std::size_t wp) {
  const std::size_t cells = hp * wp;
  Tensor out({anns.size() + 1, cells});
  for (std::size_t k = 0; k < cells; ++k) out[k] = 1.0;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const Tensor m = rasterize_mask(anns[i].box, hp, wp);
    std::copy(m.values().begin(), m.values().end(), out.storage().begin() + (i + 1) * cells);
  }
  return out;
}

/// One level_masks entry per (H_p, W_p) pair.
using MaskPyramid = std::vector<Tensor>;

inline MaskPyramid build_mask_pyramid(const std::vector<Annotation>& anns,
                                      const std::vector<std::pair<std::size_t, std::size_t>>& dims) {
  MaskPyramid out;
  for (const auto& [h, w] : dims) out.push_back(level_masks(anns, h, w));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line.

inline SceneRecord to_record(const Scene& s) { return {s.id, s.seed, s.gen, s.annotations}; }

inline nlohmann::json record_to_json(const SceneRecord& r) {
  nlohmann::json anns = nlohmann::json::array();
  for (const auto& a : r.annotations) {
    anns.push_back({{"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}, {"category", a.category}});
  }
  return {{"id", r.id}, {"seed", r.seed}, {"gen", r.gen}, {"annotations", anns}};
}

inline SceneRecord record_from_json(const nlohmann::json& j) {
  SceneRecord r;
  r.id = j.at("id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.gen = j.at("gen").get<GenConfig>();
  for (const auto& a : j.at("annotations")) {
    const auto& b = a.at("box");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have 4 numbers");
    r.annotations.push_back(
        {{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}, a.at("category").get<int>()});
  }
  return r;
}

inline void write_dataset(const std::string& path, const std::vector<SceneRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DatasetError("cannot open for writing: " + path);
  for (const auto& r : records) f << record_to_json(r).dump() << '\n';
  if (!f) throw DatasetError("write failed: " + path);
}

/// Parses a dataset file, validating each record. Malformed lines are
/// reported by line number, invariant violations by scene id.
inline std::vector<SceneRecord> load_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError("cannot open dataset: " + path);
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SceneRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
      validate(r.gen);
    } catch (const std::exception& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    if (auto why = validate_annotations(r.annotations, r.gen); !why.empty()) {
      throw DatasetError(path + ": scene " + r.id + ": " + why);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Regenerates the image for a record; annotations are taken from the record.
inline Scene materialize(const SceneRecord& r) {
  Scene s = generate_scene(r.seed, r.gen);
  s.id = r.id;
  s.annotations = r.annotations;
  return s;
}

}  // namespace lgd
