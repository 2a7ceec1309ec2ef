#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/detector.hpp"
#include "lgd/model.hpp"
#include "lgd/scene.hpp"
#include "lgd/trainer.hpp"

namespace lgd {

/// Problems with the configuration itself (unknown keys, wrong types, bad
/// values). The CLI reports these as usage errors.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Environment variable naming the root for relative output paths.
inline constexpr const char* kOutputRootEnv = "LGD_OUTPUT_ROOT";
inline constexpr const char* kConfigResolved = "config_resolved.json";

struct DataConfig {
  std::string train;  // dataset file; empty: generate from train_seed
  std::string val;
  std::uint64_t train_seed = 0;
  std::uint64_t val_seed = 1;
  std::size_t train_count = 500;
  std::size_t val_count = 100;
};

struct RunConfig {
  Mode mode = Mode::kLgd;
  std::uint64_t seed = 0;  // root of the init and shuffle streams
  std::string out_dir = "runs/default";
  DataConfig data;
  GenConfig gen;
  ModelConfig model;
  TrainConfig trainer;
  DecodeOptions eval;

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.mode = mode;
    m.detector.num_classes = gen.num_classes;
    return m;
  }
  TrainConfig train_config() const {
    TrainConfig t = trainer;
    t.seed = seed;
    return t;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& t = c.trainer;
  const auto& d = c.model.detector;
  const auto& l = c.model.lgd;
  return {
      {"mode", to_string(c.mode)},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"data",
       {{"train", c.data.train},
        {"val", c.data.val},
        {"train_seed", c.data.train_seed},
        {"val_seed", c.data.val_seed},
        {"train_count", c.data.train_count},
        {"val_count", c.data.val_count}}},
      {"gen", c.gen},
      {"model",
       {{"channels", d.channels},
        {"backbone_widths", d.backbone_widths},
        {"level_split", d.level_split},
        {"label_hidden", l.label_hidden},
        {"encoder", to_string(l.encoder)},
        {"heads", l.heads},
        {"temperature", to_string(l.temperature)},
        {"query", to_string(l.query)},
        {"context_participation", l.context_participation},
        {"head_sharing", l.head_sharing}}},
      {"trainer",
       {{"total_iters", t.total_iters},
        {"distill_start_frac", t.distill_start_frac},
        {"backbone_freeze_frac", t.backbone_freeze_frac},
        {"distill_end_frac", t.distill_end_frac ? json(*t.distill_end_frac) : json(nullptr)},
        {"base_lr", t.base_lr},
        {"reference_batch", t.reference_batch},
        {"lr_milestones", t.lr_milestones},
        {"lr_gamma", t.lr_gamma},
        {"warmup_iters", t.warmup_iters},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"batch_size", t.batch_size},
        {"grad_clip_norm", t.grad_clip_norm},
        {"checkpoint_every", t.checkpoint_every}}},
      {"eval",
       {{"score_thresh", c.eval.score_thresh},
        {"nms_iou", c.eval.nms_iou},
        {"max_detections", c.eval.max_detections}}},
  };
}

namespace detail {

inline void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object()) {
    if (known.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    return;
  }
  if (!known.is_object()) throw ConfigError("config: '" + path + "' must not be an object");
  for (const auto& [k, v] : given.items()) {
    const std::string sub = path.empty() ? k : path + "." + k;
    if (!known.contains(k)) throw ConfigError("config: unknown key '" + sub + "'");
    reject_unknown(v, known.at(k), sub);
  }
}

// Object-wise overlay; unlike merge_patch a null value is kept as null.
inline void overlay(nlohmann::json& base, const nlohmann::json& top) {
  for (const auto& [k, v] : top.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object()) {
      overlay(base[k], v);
    } else {
      base[k] = v;
    }
  }
}

}  // namespace detail

/// Reads a complete document (as produced by overlaying onto the defaults).
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.at("out_dir").get<std::string>();
    const auto& d = j.at("data");
    c.data.train = d.at("train").get<std::string>();
    c.data.val = d.at("val").get<std::string>();
    c.data.train_seed = d.at("train_seed").get<std::uint64_t>();
    c.data.val_seed = d.at("val_seed").get<std::uint64_t>();
    c.data.train_count = d.at("train_count").get<std::size_t>();
    c.data.val_count = d.at("val_count").get<std::size_t>();
    c.gen = j.at("gen").get<GenConfig>();
    const auto& m = j.at("model");
    c.model.detector.channels = m.at("channels").get<int>();
    c.model.detector.backbone_widths = m.at("backbone_widths").get<std::array<int, 4>>();
    c.model.detector.level_split = m.at("level_split").get<double>();
    c.model.lgd.label_hidden = m.at("label_hidden").get<std::array<int, 2>>();
    c.model.lgd.encoder = parse_encoder(m.at("encoder").get<std::string>());
    c.model.lgd.heads = m.at("heads").get<int>();
    c.model.lgd.temperature = parse_temperature(m.at("temperature").get<std::string>());
    c.model.lgd.query = parse_query(m.at("query").get<std::string>());
    c.model.lgd.context_participation = m.at("context_participation").get<bool>();
    c.model.lgd.head_sharing = m.at("head_sharing").get<bool>();
    const auto& t = j.at("trainer");
    auto& tc = c.trainer;
    tc.total_iters = t.at("total_iters").get<std::size_t>();
    tc.distill_start_frac = t.at("distill_start_frac").get<double>();
    tc.backbone_freeze_frac = t.at("backbone_freeze_frac").get<double>();
    if (const auto& e = t.at("distill_end_frac"); !e.is_null()) tc.distill_end_frac = e.get<double>();
    tc.base_lr = t.at("base_lr").get<double>();
    tc.reference_batch = t.at("reference_batch").get<std::size_t>();
    tc.lr_milestones = t.at("lr_milestones").get<std::vector<double>>();
    tc.lr_gamma = t.at("lr_gamma").get<double>();
    tc.warmup_iters = t.at("warmup_iters").get<std::size_t>();
    tc.momentum = t.at("momentum").get<double>();
    tc.weight_decay = t.at("weight_decay").get<double>();
    tc.batch_size = t.at("batch_size").get<std::size_t>();
    tc.grad_clip_norm = t.at("grad_clip_norm").get<double>();
    tc.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    const auto& e = j.at("eval");
    c.eval.score_thresh = e.at("score_thresh").get<double>();
    c.eval.nms_iou = e.at("nms_iou").get<double>();
    c.eval.max_detections = e.at("max_detections").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline void validate(const RunConfig& c) {
  try {
    validate(c.gen);
    validate(c.train_config());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const auto& d = c.model.detector;
  if (d.channels <= 0 || c.model.lgd.heads <= 0 || d.channels % c.model.lgd.heads != 0) {
    throw ConfigError("config: model.channels must be a positive multiple of model.heads");
  }
  for (int w : d.backbone_widths) {
    if (w <= 0) throw ConfigError("config: model.backbone_widths must be positive");
  }
  for (int w : c.model.lgd.label_hidden) {
    if (w <= 0) throw ConfigError("config: model.label_hidden must be positive");
  }
  if (c.gen.height % 16 != 0 || c.gen.width % 16 != 0) {
    throw ConfigError("config: image size must be divisible by 16");
  }
  if (c.eval.nms_iou < 0 || c.eval.nms_iou > 1) throw ConfigError("config: eval.nms_iou must lie in [0, 1]");
}

/// Parses a flag value: JSON if it parses as JSON, otherwise a plain string.
inline nlohmann::json parse_flag_value(const std::string& text) {
  auto v = nlohmann::json::parse(text, nullptr, false);
  return v.is_discarded() ? nlohmann::json(text) : v;
}

/// Dotted leaf paths of the default document ("trainer.total_iters", ...).
inline std::vector<std::string> config_paths() {
  std::vector<std::string> out;
  const nlohmann::json defaults = to_json(RunConfig{});
  for (const auto& [k, v] : defaults.items()) {
    if (v.is_object()) {
      for (const auto& [k2, _] : v.items()) out.push_back(k + "." + k2);
    } else {
      out.push_back(k);
    }
  }
  return out;
}

/// defaults <- config document <- dotted overrides (flags win).
inline RunConfig resolve_config(const nlohmann::json& document,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json merged = to_json(RunConfig{});
  detail::reject_unknown(document, merged, "");
  detail::overlay(merged, document);
  for (const auto& [path, text] : overrides) {
    std::string p = "/";
    for (char ch : path) p += ch == '.' ? '/' : ch;
    const nlohmann::json::json_pointer ptr(p);
    if (!merged.contains(ptr)) throw ConfigError("config: unknown key '" + path + "'");
    merged[ptr] = parse_flag_value(text);
  }
  RunConfig c = run_config_from_json(merged);
  validate(c);
  return c;
}

inline nlohmann::json read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  auto j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config file is not a JSON object: " + path);
  return j;
}

/// Relative output paths live under $LGD_OUTPUT_ROOT when it is set.
inline std::filesystem::path output_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / path;
  return path;
}

inline void write_resolved(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json(c).dump(2) << '\n';
}

/// Scene seeds for a dataset are consecutive, starting from the "data" stream of `seed`.
inline std::uint64_t first_scene_seed(std::uint64_t seed) { return stream_seed(seed, "data") >> 16; }

inline std::vector<Scene> generate_scenes(std::uint64_t seed, std::size_t count, const GenConfig& gen) {
  const std::uint64_t first = first_scene_seed(seed);
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(first + i, gen));
  return out;
}

inline std::vector<SceneRecord> generate_records(std::uint64_t seed, std::size_t count, const GenConfig& gen) {
  std::vector<SceneRecord> out;
  for (const auto& s : generate_scenes(seed, count, gen)) out.push_back(to_record(s));
  return out;
}

inline std::vector<Scene> materialize_all(const std::vector<SceneRecord>& records) {
  std::vector<Scene> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(materialize(r));
  return out;
}

/// Scenes for one split: the named file if set, otherwise generated.
inline std::vector<Scene> load_split(const std::string& file, std::uint64_t seed, std::size_t count,
                                     const GenConfig& gen) {
  if (!file.empty()) return materialize_all(load_annotations(file));
  return generate_scenes(seed, count, gen);
}

}  // namespace lgd
