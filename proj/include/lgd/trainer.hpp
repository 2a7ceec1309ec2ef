#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgd/model.hpp"
#include "lgd/params.hpp"
#include "lgd/serialize.hpp"

namespace lgd {

struct TrainConfig {
  std::size_t total_iters = 2000;
  double distill_start_frac = 1.0 / 6.0;
  double backbone_freeze_frac = 1.0 / 9.0;
  std::optional<double> distill_end_frac;
  double base_lr = 0.01;
  std::size_t reference_batch = 16;  // batch size base_lr refers to
  std::vector<double> lr_milestones{2.0 / 3.0, 8.0 / 9.0};
  double lr_gamma = 0.1;
  std::size_t warmup_iters = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;
  double grad_clip_norm = 35.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

inline void validate(const TrainConfig& c) {
  auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (c.total_iters == 0) throw std::invalid_argument("trainer: total_iters must be positive");
  if (!frac(c.distill_start_frac) || !frac(c.backbone_freeze_frac)) {
    throw std::invalid_argument("trainer: schedule fractions must lie in [0, 1]");
  }
  if (c.distill_end_frac && (!frac(*c.distill_end_frac) || *c.distill_end_frac < c.distill_start_frac)) {
    throw std::invalid_argument("trainer: distill_end_frac must lie in [distill_start_frac, 1]");
  }
  for (std::size_t i = 0; i < c.lr_milestones.size(); ++i) {
    if (!frac(c.lr_milestones[i]) || (i > 0 && c.lr_milestones[i] < c.lr_milestones[i - 1])) {
      throw std::invalid_argument("trainer: lr milestones must be ordered fractions");
    }
  }
  if (c.grad_clip_norm < 0.0) throw std::invalid_argument("trainer: grad_clip_norm must be non-negative");
  if (c.batch_size == 0 || c.reference_batch == 0) throw std::invalid_argument("trainer: batch size must be positive");
}

/// Iteration-count view of the fractional schedule.
struct Schedule {
  std::size_t distill_start = 0;
  std::size_t distill_end = 0;  // exclusive
  std::size_t freeze_end = 0;   // backbone frozen for iter < freeze_end
  std::vector<std::size_t> milestones;
  double peak_lr = 0.0;
  double gamma = 0.1;
  std::size_t warmup = 0;

  explicit Schedule(const TrainConfig& c) {
    const auto at = [&](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(c.total_iters))); };
    distill_start = at(c.distill_start_frac);
    distill_end = c.distill_end_frac ? at(*c.distill_end_frac) : c.total_iters;
    freeze_end = at(c.backbone_freeze_frac);
    for (double m : c.lr_milestones) milestones.push_back(at(m));
    peak_lr = c.base_lr * static_cast<double>(c.batch_size) / static_cast<double>(c.reference_batch);
    gamma = c.lr_gamma;
    warmup = c.warmup_iters;
  }

  bool distilling(std::size_t iter) const { return iter >= distill_start && iter < distill_end; }
  bool frozen(std::size_t iter) const { return iter < freeze_end; }

  double lr(std::size_t iter) const {
    double lr = peak_lr;
    for (auto m : milestones) {
      if (iter >= m) lr *= gamma;
    }
    if (iter < warmup) lr *= static_cast<double>(iter + 1) / static_cast<double>(warmup);
    return lr;
  }
};

struct LossReport {
  std::size_t iter = 0;
  double det_student = 0.0;
  double det_instructive = 0.0;
  double distill = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool frozen = false;
  bool distilling = false;
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

inline nlohmann::json to_json(const LossReport& r) {
  return {{"iter", r.iter},         {"l_det_s", r.det_student}, {"l_det_i", r.det_instructive},
          {"l_distill", r.distill}, {"l_total", r.total},       {"lr", r.lr},
          {"grad_norm", r.grad_norm}, {"frozen", r.frozen},     {"distilling", r.distilling}};
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool is_backbone_param(const std::string& name) { return has_prefix(name, "student.backbone."); }

/// One optimisation step on a batch. Each loss component is averaged over
/// the batch; L_total = L_det^S + L_det^I + L_distill.
inline LossReport train_step(ParameterStore& store, const ModelConfig& model, const Schedule& sched,
                             const TrainConfig& tc, const std::vector<const Scene*>& batch, std::size_t iter) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const bool lgd_on = model.mode == Mode::kLgd;
  const bool distilling = lgd_on && sched.distilling(iter);
  const bool frozen = sched.frozen(iter);

  store.zero_grad();
  Graph g;
  Var det_s, det_i, dist;
  auto accumulate = [](Var& acc, Var v) { acc = acc.valid() ? add(acc, v) : v; };
  for (const Scene* s : batch) {
    SceneForward f = forward_scene(g, store, model, *s, distilling);
    accumulate(det_s, f.det_student);
    if (lgd_on) accumulate(det_i, f.det_instructive);
    if (distilling) accumulate(dist, f.distill);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  det_s = scale(det_s, inv);
  Var total = det_s;
  LossReport r;
  r.iter = iter;
  r.lr = sched.lr(iter);
  r.frozen = frozen;
  r.distilling = distilling;
  r.det_student = det_s.value()[0];
  if (lgd_on) {
    det_i = scale(det_i, inv);
    total = add(total, det_i);
    r.det_instructive = det_i.value()[0];
  }
  if (distilling) {
    dist = scale(dist, inv);
    total = add(total, dist);
    r.distill = dist.value()[0];
  }
  r.total = total.value()[0];
  if (!std::isfinite(r.total)) {
    std::ostringstream ids;
    for (const Scene* s : batch) ids << ' ' << s->id;
    throw TrainingError("non-finite loss at iteration " + std::to_string(iter) + "; batch:" + ids.str());
  }
  g.backward(total);
  const auto is_frozen = [frozen](const std::string& name) { return frozen && is_backbone_param(name); };
  r.grad_norm = clip_grad_norm(store, tc.grad_clip_norm, is_frozen);
  sgd_update(store, r.lr, tc.momentum, tc.weight_decay, is_frozen);
  return r;
}

inline std::string checkpoint_name(std::size_t iter) { return "ckpt_" + std::to_string(iter) + ".bin"; }
inline constexpr const char* kStudentExport = "student_only_final.bin";
inline constexpr const char* kMetricsLog = "metrics.jsonl";

/// Full state: parameters, momentum buffers ("optim.momentum.<name>") and
/// the iteration counter ("optim.iter").
inline std::vector<NamedTensor> full_state(const ParameterStore& store, std::size_t iter) {
  auto out = export_parameters(store, [](const std::string&) { return true; });
  for (const auto& [name, e] : store.entries()) {
    out.push_back({"optim.momentum." + name, Tensor(e.value.shape(), e.momentum)});
  }
  out.push_back({"optim.iter", Tensor::scalar(static_cast<double>(iter))});
  return out;
}

inline std::vector<NamedTensor> student_only(const ParameterStore& store) {
  return export_parameters(store, is_student_tensor);
}

struct TrainResult {
  ParameterStore params;
  std::vector<LossReport> log;
};

/// Runs the full schedule over `scenes` with a seeded shuffle, writing
/// metrics and checkpoints into `out_dir` (skipped when empty).
inline TrainResult run_training(const ModelConfig& model, const TrainConfig& tc, const std::vector<Scene>& scenes,
                                const std::string& out_dir) {
  validate(tc);
  if (scenes.empty()) throw std::invalid_argument("run_training: dataset is empty");
  namespace fs = std::filesystem;
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    metrics.open(fs::path(out_dir) / kMetricsLog, std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + (fs::path(out_dir) / kMetricsLog).string());
  }

  TrainResult res;
  init_model(res.params, model, tc.seed);
  const Schedule sched(tc);
  Rng shuffle_rng(stream_seed(tc.seed, "shuffle"));
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, shuffle_rng);
  std::size_t cursor = 0;

  for (std::size_t iter = 0; iter < tc.total_iters; ++iter) {
    std::vector<const Scene*> batch;
    while (batch.size() < std::min(tc.batch_size, scenes.size())) {
      if (cursor == order.size()) {
        shuffle(order, shuffle_rng);
        cursor = 0;
      }
      batch.push_back(&scenes[order[cursor++]]);
    }
    LossReport r = train_step(res.params, model, sched, tc, batch, iter);
    res.log.push_back(r);
    if (metrics.is_open()) metrics << to_json(r).dump() << '\n' << std::flush;
    if (!out_dir.empty() && tc.checkpoint_every > 0 && (iter + 1) % tc.checkpoint_every == 0 &&
        iter + 1 < tc.total_iters) {
      write_tensors((fs::path(out_dir) / checkpoint_name(iter + 1)).string(), full_state(res.params, iter + 1));
    }
  }
  if (!out_dir.empty()) {
    write_tensors((fs::path(out_dir) / checkpoint_name(tc.total_iters)).string(),
                  full_state(res.params, tc.total_iters));
    write_tensors((fs::path(out_dir) / kStudentExport).string(), student_only(res.params));
  }
  return res;
}

}  // namespace lgd
