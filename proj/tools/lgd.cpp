// lgd: command-line driver for dataset generation, training, evaluation,
// feature dumps and seed comparisons.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "lgd/evaluator.hpp"
#include "lgd/run_config.hpp"

namespace fs = std::filesystem;
using namespace lgd;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Config document plus dotted overrides collected for one subcommand.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd, const std::vector<std::string>& paths) {
    cmd->add_option("--config", config_file, "JSON run configuration");
    for (const auto& p : paths) {
      values[p];
      cmd->add_option("--" + p, values[p], "override " + p)
          ->group("Config overrides")
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  /// `fallback` is used as the document when --config is absent and it exists.
  RunConfig resolve(CLI::App* cmd, const fs::path& fallback = {}) const {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_file.empty()) {
      doc = read_config_file(config_file);
    } else if (!fallback.empty() && fs::exists(fallback)) {
      doc = read_config_file(fallback.string());
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [path, text] : values) {
      if (cmd->count("--" + path) > 0) overrides.emplace_back(path, text);
    }
    return resolve_config(doc, overrides);
  }
};

std::vector<std::string> paths_with_prefix(const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& p : config_paths()) {
    if (p.rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// "dir/eval.json" -> "dir/eval.config_resolved.json"
fs::path resolved_beside(const fs::path& output) {
  return output.parent_path() / (output.stem().string() + "." + kConfigResolved);
}

std::vector<Scene> val_scenes(const RunConfig& c, const std::string& data_file) {
  const std::string file = data_file.empty() ? c.data.val : data_file;
  return load_split(file, c.data.val_seed, c.data.val_count, c.gen);
}

// ---------------------------------------------------------------------------

int cmd_gen(CLI::App* cmd, const ConfigFlags& flags, std::uint64_t seed, std::size_t count, const std::string& out,
            bool force) {
  RunConfig c = flags.resolve(cmd);
  const fs::path path = output_path(out);
  if (fs::exists(path) && !force) {
    std::cerr << "gen: " << path.string() << " exists; pass --force to overwrite\n";
    return kUsage;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset(path.string(), generate_records(seed, count, c.gen));
  c.data.train = path.string();
  c.data.train_seed = seed;
  c.data.train_count = count;
  write_resolved(resolved_beside(path), c);
  std::cout << "wrote " << count << " scenes to " << path.string() << '\n';
  return kOk;
}

int cmd_train(CLI::App* cmd, const ConfigFlags& flags) {
  const RunConfig c = flags.resolve(cmd);
  const fs::path dir = output_path(c.out_dir);
  fs::create_directories(dir);
  write_resolved(dir / kConfigResolved, c);
  const auto scenes = load_split(c.data.train, c.data.train_seed, c.data.train_count, c.gen);
  std::cout << "training " << to_string(c.mode) << " on " << scenes.size() << " scenes for "
            << c.trainer.total_iters << " iterations -> " << dir.string() << std::endl;
  const auto res = run_training(c.model_config(), c.train_config(), scenes, dir.string());
  std::cout << "final " << to_json(res.log.back()).dump() << '\n';
  return kOk;
}

int cmd_eval(CLI::App* cmd, const ConfigFlags& flags, const std::string& ckpt, const std::string& data,
             const std::string& out) {
  const RunConfig c = flags.resolve(cmd, fs::path(ckpt).parent_path() / kConfigResolved);
  const auto tensors = read_tensors(ckpt);
  const auto scenes = val_scenes(c, data);
  const EvalResult r = evaluate_checkpoint(tensors, scenes, c.eval);
  const fs::path path = output_path(out.empty() ? (fs::path(c.out_dir) / "eval.json").string() : out);
  nlohmann::json j = to_json(r);
  j["checkpoint"] = ckpt;
  j["num_images"] = scenes.size();
  write_json(path, j);
  write_resolved(resolved_beside(path), c);
  std::cout << j.dump() << '\n';
  return kOk;
}

int cmd_inspect(CLI::App* cmd, const ConfigFlags& flags, const std::string& ckpt, const std::string& data,
                const std::string& scene_id, const std::string& out) {
  const RunConfig c = flags.resolve(cmd, fs::path(ckpt).parent_path() / kConfigResolved);
  ParameterStore store = store_from_tensors(read_tensors(ckpt), [](const std::string& n) {
    return !has_prefix(n, "optim.");
  });
  if (!store.contains("lgd.attn.q.w")) throw std::runtime_error("inspect: " + ckpt + " has no label-guided tensors");
  ModelConfig mc = c.model_config();
  mc.mode = Mode::kLgd;
  mc.detector = infer_detector_config(store, c.model.detector.level_split);
  if (store.contains("lgd.head.cls.w")) mc.lgd.head_sharing = false;

  const auto scenes = val_scenes(c, data);
  const Scene* scene = nullptr;
  for (const auto& s : scenes) {
    if (s.id == scene_id) scene = &s;
  }
  if (!scene) throw std::runtime_error("inspect: no scene '" + scene_id + "' in the dataset");

  Graph g;
  const auto geo = pyramid_geometry(scene->image.dim(0), scene->image.dim(1), mc.detector);
  const auto pyr = forward_backbone(g, store, scene->image, mc.detector);
  const LgdForward f = forward_lgd(g, store, mc, *scene, pyr, geo, true);
  const MaskPyramid masks = build_mask_pyramid(scene->annotations, level_dims(geo));

  std::vector<NamedTensor> dump{{"image", scene->image},
                                {"labels", build_descriptors(scene->annotations, mc.detector.num_classes)}};
  for (std::size_t p = 0; p < pyr.maps.size(); ++p) {
    const std::string lv = "p" + std::to_string(p + 1) + ".";
    dump.push_back({lv + "X", pyr.maps[p].value()});
    dump.push_back({lv + "X_S", f.adapted[p].value()});
    dump.push_back({lv + "X_I", f.instructive[p].value()});
    dump.push_back({lv + "masks", masks[p]});
    for (std::size_t t = 0; t < f.attention[p].weights.size(); ++t) {
      dump.push_back({lv + "attn.h" + std::to_string(t + 1), f.attention[p].weights[t]});
    }
  }
  const fs::path dir = output_path(out.empty() ? (fs::path(c.out_dir) / ("inspect_" + scene_id)).string() : out);
  fs::create_directories(dir);
  write_tensors((dir / "tensors.bin").string(), dump);
  nlohmann::json meta{{"scene", scene->id}, {"checkpoint", ckpt}, {"tensors", nlohmann::json::array()}};
  for (const auto& t : dump) meta["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  write_json(dir / "inspect.json", meta);
  write_resolved(dir / kConfigResolved, c);
  std::cout << "wrote " << dump.size() << " tensors to " << (dir / "tensors.bin").string() << '\n';
  return kOk;
}

int cmd_compare(CLI::App* cmd, const ConfigFlags& flags, const std::vector<std::string>& baseline,
                const std::vector<std::string>& lgd_ckpts, std::vector<std::uint64_t> seeds, const std::string& data,
                const std::string& out) {
  if (baseline.size() != lgd_ckpts.size()) {
    std::cerr << "compare: --baseline and --lgd need the same number of checkpoints\n";
    return kUsage;
  }
  if (seeds.empty()) {
    for (std::size_t i = 0; i < baseline.size(); ++i) seeds.push_back(i);
  }
  if (seeds.size() != baseline.size()) {
    std::cerr << "compare: --seeds must list one seed per checkpoint pair\n";
    return kUsage;
  }
  const RunConfig c = flags.resolve(cmd);
  std::vector<RunPair> pairs;
  for (std::size_t i = 0; i < seeds.size(); ++i) pairs.push_back({seeds[i], baseline[i], lgd_ckpts[i]});
  const Comparison cmp = compare_runs(pairs, val_scenes(c, data), c.eval);
  const fs::path path = output_path(out.empty() ? (fs::path(c.out_dir) / "compare.json").string() : out);
  write_json(path, cmp.to_json());
  write_resolved(resolved_beside(path), c);
  std::cout << cmp.table();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-guided self-distillation on synthetic shapes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a dataset file");
  ConfigFlags gen_flags;
  gen_flags.attach(gen, paths_with_prefix("gen."));
  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 500;
  std::string gen_out = "data/dataset.jsonl";
  bool gen_force = false;
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--count", gen_count, "Number of scenes")->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset path")->capture_default_str();
  gen->add_flag("--force", gen_force, "Overwrite an existing file");

  // train
  auto* train = app.add_subcommand("train", "Train a detector (baseline or lgd mode)");
  ConfigFlags train_flags;
  train_flags.attach(train, config_paths());

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint through the student path");
  ConfigFlags eval_flags;
  eval_flags.attach(eval, config_paths());
  std::string eval_ckpt, eval_data, eval_out;
  eval->add_option("ckpt", eval_ckpt, "Checkpoint (full or student-only)")->required();
  eval->add_option("--data", eval_data, "Dataset file (default: validation split of the config)");
  eval->add_option("--out", eval_out, "Results JSON path");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Dump label-guided features for one scene");
  ConfigFlags inspect_flags;
  inspect_flags.attach(inspect, config_paths());
  std::string inspect_ckpt, inspect_data, inspect_scene, inspect_out;
  inspect->add_option("ckpt", inspect_ckpt, "Full checkpoint")->required();
  inspect->add_option("--scene", inspect_scene, "Scene id")->required();
  inspect->add_option("--data", inspect_data, "Dataset file (default: validation split of the config)");
  inspect->add_option("--out", inspect_out, "Output directory");

  // compare
  auto* compare = app.add_subcommand("compare", "Compare baseline and lgd checkpoints over seeds");
  ConfigFlags compare_flags;
  compare_flags.attach(compare, config_paths());
  std::vector<std::string> cmp_base, cmp_lgd;
  std::vector<std::uint64_t> cmp_seeds;
  std::string cmp_data, cmp_out;
  compare->add_option("--baseline", cmp_base, "Baseline checkpoints")->required();
  compare->add_option("--lgd", cmp_lgd, "LGD checkpoints, same order")->required();
  compare->add_option("--seeds", cmp_seeds, "Seed label per pair");
  compare->add_option("--data", cmp_data, "Dataset file (default: validation split of the config)");
  compare->add_option("--out", cmp_out, "Results JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen, gen_flags, gen_seed, gen_count, gen_out, gen_force);
    if (*train) return cmd_train(train, train_flags);
    if (*eval) return cmd_eval(eval, eval_flags, eval_ckpt, eval_data, eval_out);
    if (*inspect) return cmd_inspect(inspect, inspect_flags, inspect_ckpt, inspect_data, inspect_scene, inspect_out);
    if (*compare) return cmd_compare(compare, compare_flags, cmp_base, cmp_lgd, cmp_seeds, cmp_data, cmp_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
