// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--iters N] [--ablation-iters N] [--seeds N]
//
// Artifacts (checkpoints, comparison JSON) go to $LGD_OUTPUT_ROOT/acceptance,
// or ./acceptance when the variable is unset.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "lgd/evaluator.hpp"
#include "lgd/grad_check.hpp"
#include "lgd/run_config.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace lgd;
using lgd::testing::all_zero;
using lgd::testing::max_rel_diff;
using lgd::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.detector.channels = 8;
  mc.detector.backbone_widths = {4, 6, 8, 8};
  mc.lgd.label_hidden = {8, 8};
  mc.lgd.heads = 2;
  return mc;
}

// ---------------------------------------------------------------------------
// 1. gradient suite

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::size_t checks = 0, failed = 0;
  std::string worst_what;
  auto check = [&](const std::string& what, const std::function<Var(Graph&)>& f, std::vector<Tensor*> params) {
    const auto rep = grad_check(f, params);
    ++checks;
    if (!rep.passed) ++failed;
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_what = what;
    }
  };
  for (int trial = 0; trial < 3; ++trial) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(2, 5)), w = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 4));
    Tensor a = random_tensor({h, w, c}, rng), b = random_tensor({h, w, c}, rng), bc = random_tensor({c}, rng);
    Tensor wt = random_tensor({h, w, c}, rng);
    // weights must be the same on every re-evaluation of the objective
    const std::uint64_t wseed = rng.next();
    auto ws = [&, wseed](Var v) {
      Rng wr(wseed);
      Tensor wv = random_tensor(v.shape(), wr);
      return sum(mul(v, v.graph().constant(wv)));
    };
    check("add", [&](Graph& g) { return sum(mul(add(g.param(a), g.param(b)), g.constant(wt))); }, {&a, &b});
    check("add_bcast", [&](Graph& g) { return sum(mul(add(g.param(a), g.param(bc)), g.constant(wt))); }, {&a, &bc});
    check("mul", [&](Graph& g) { return sum(mul(mul(g.param(a), g.param(b)), g.constant(wt))); }, {&a, &b});
    check("relu", [&](Graph& g) { return sum(mul(relu(g.param(a)), g.constant(wt))); }, {&a});
    check("exp", [&](Graph& g) { return sum(mul(exp(g.param(a)), g.constant(wt))); }, {&a});
    check("squared_sum", [&](Graph& g) { return squared_sum(g.param(a)); }, {&a});
    Tensor ssw = random_tensor({c}, rng);
    check("sum_spatial", [&](Graph& g) { return sum(mul(sum_spatial(g.param(a)), g.constant(ssw))); }, {&a});

    const auto m = h + 1, k = w + 1, n = c + 1;
    Tensor ma = random_tensor({m, k}, rng), mb = random_tensor({k, n}, rng), bias = random_tensor({n}, rng);
    Tensor mw = random_tensor({m, n}, rng), tw = random_tensor({k, m}, rng);
    check("matmul", [&](Graph& g) { return sum(mul(matmul(g.param(ma), g.param(mb)), g.constant(mw))); }, {&ma, &mb});
    check("linear", [&](Graph& g) { return sum(mul(linear(g.param(ma), g.param(mb), g.param(bias)), g.constant(mw))); },
          {&ma, &mb, &bias});
    check("transpose", [&](Graph& g) { return sum(mul(transpose(g.param(ma)), g.constant(tw))); }, {&ma});

    const auto co = static_cast<std::size_t>(rng.uniform_int(1, 4));
    Tensor kx = random_tensor({3, 3, c, co}, rng), kb = random_tensor({co}, rng), k1 = random_tensor({c, co}, rng);
    Graph probe;
    const Shape s1 = conv3x3(probe.constant(a), probe.constant(kx), {}, 1).shape();
    const Shape s2 = conv3x3(probe.constant(a), probe.constant(kx), {}, 2).shape();
    Tensor cw1 = random_tensor(s1, rng), cw2 = random_tensor(s2, rng);
    check("conv3x3", [&](Graph& g) { return sum(mul(conv3x3(g.param(a), g.param(kx), g.param(kb)), g.constant(cw1))); },
          {&a, &kx, &kb});
    check("conv3x3_s2",
          [&](Graph& g) { return sum(mul(conv3x3(g.param(a), g.param(kx), g.param(kb), 2), g.constant(cw2))); },
          {&a, &kx, &kb});
    check("conv1x1", [&](Graph& g) { return sum(mul(conv1x1(g.param(a), g.param(k1), g.param(kb)), g.constant(cw1))); },
          {&a, &k1, &kb});

    Tensor ln = random_tensor({m, n}, rng), gam = random_tensor({n}, rng), bet = random_tensor({n}, rng);
    check("layer_norm",
          [&](Graph& g) { return sum(mul(layer_norm(g.param(ln), g.param(gam), g.param(bet)), g.constant(mw))); },
          {&ln, &gam, &bet});
    Tensor in = random_tensor({h, w + 1, c}, rng), inw = random_tensor({h, w + 1, c}, rng);
    check("instance_norm", [&](Graph& g) { return sum(mul(instance_norm(g.param(in)), g.constant(inw))); }, {&in});
    check("softmax_rows", [&](Graph& g) { return sum(mul(softmax_rows(g.param(ln), 1.3), g.constant(mw))); }, {&ln});
    check("max_rows", [&](Graph& g) { return ws(max_rows(g.param(ln))); }, {&ln});
    check("concat", [&](Graph& g) { return ws(concat_channels({g.param(a), g.param(b)})); }, {&a, &b});
    check("resize", [&](Graph& g) { return ws(resize_nearest(g.param(a), 2 * h, 2 * w)); }, {&a});
    check("slices", [&](Graph& g) { return add(ws(slice_cols(g.param(ln), 1, n)), ws(slice_rows(g.param(ln), 1, m))); },
          {&ln});

    Tensor masks({3, h * w});
    for (auto& v : masks.values()) v = rng.uniform() < 0.5;
    Tensor mpw = random_tensor({3, c}, rng);
    check("mask_pool", [&](Graph& g) { return sum(mul(mask_pool(g.param(a), masks), g.constant(mpw))); }, {&a});

    Tensor logits = random_tensor({m, 3}, rng, -3, 3);
    std::vector<int> labels(m);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, 3));
    check("focal", [&](Graph& g) { return focal_loss_sum(g.param(logits), labels); }, {&logits});
    Tensor pred = random_tensor({m, 4}, rng, 0.2, 3), target = random_tensor({m, 4}, rng, 0.2, 3);
    std::vector<std::uint8_t> pos(m, 1);
    check("iou_loss", [&](Graph& g) { return iou_loss_sum(g.param(pred), target, pos); }, {&pred});
  }

  // Full objective on a 2-object 32x32 scene with the label-guided branch on.
  GenConfig gen;
  gen.height = gen.width = 32;
  gen.min_objects = gen.max_objects = 2;
  gen.max_size = 24;
  const Scene scene = generate_scene(7, gen);
  ModelConfig mc = small_model();
  ParameterStore store;
  init_model(store, mc, 3);
  // zero-initialised biases leave relu inputs exactly on the kink wherever the
  // previous stage is dead, so check at a generic point instead
  std::vector<Tensor*> params;
  for (auto& [name, e] : store.entries()) {
    if (name.ends_with(".b"))
      for (auto& v : e.value.values()) v = rng.uniform(-0.1, 0.1);
    params.push_back(&e.value);
  }
  const auto full = grad_check(
      [&](Graph& g) {
        auto f = forward_scene(g, store, mc, scene, true);
        return add(add(f.det_student, f.det_instructive), f.distill);
      },
      params);
  ++checks;
  if (!full.passed) ++failed;
  if (full.max_rel_err > worst) {
    worst = full.max_rel_err;
    worst_what = "L_total";
  }
  const double secs = seconds_since(t0);
  const bool ok = failed == 0 && worst < 1e-4 && secs < 120.0;
  return {ok, std::to_string(checks) + " checks (L_total over " + std::to_string(full.checked) +
                  " parameters), max rel err " + fmt("%.2e", worst) + " at " + worst_what + ", " + fmt("%.1f", secs) +
                  " s (limits 1e-4, 120 s)"};
}

// ---------------------------------------------------------------------------
// 2. attention rows are distributions

Outcome row_stochastic() {
  double worst = 0.0;
  bool negative = false;
  std::size_t rows = 0;
  for (auto mode : {TemperatureMode::kPerHead, TemperatureMode::kFull}) {
    ModelConfig mc;
    mc.lgd.temperature = mode;
    ParameterStore store;
    init_model(store, mc, 21);
    for (std::uint64_t i = 0; i < 100; ++i) {
      const Scene s = generate_scene(20000 + i, GenConfig{});
      Graph g;
      const auto geo = pyramid_geometry(64, 64, mc.detector);
      const auto pyr = forward_backbone(g, store, s.image, mc.detector);
      const auto f = forward_lgd(g, store, mc, s, pyr, geo, false);
      for (const auto& level : f.attention) {
        for (const auto& w : level.weights) {
          for (std::size_t r = 0; r < w.dim(0); ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < w.dim(1); ++c) {
              sum += w.at(r, c);
              negative = negative || w.at(r, c) < 0.0;
            }
            worst = std::max(worst, std::abs(sum - 1.0));
            ++rows;
          }
        }
      }
    }
  }
  return {!negative && worst <= 1e-6, std::to_string(rows) + " rows over 100 scenes x 2 temperature modes, max |sum-1| " +
                                           fmt("%.2e", worst) + " (limit 1e-6)"};
}

// ---------------------------------------------------------------------------
// 3. instructive maps ignore object order

Outcome permutation_invariance() {
  ModelConfig mc;
  ParameterStore store;
  init_model(store, mc, 31);
  GenConfig gen;
  gen.min_objects = 2;
  Rng rng(32);
  double worst = 0.0;
  auto instructive = [&](const Scene& sc) {
    Graph g;
    const auto geo = pyramid_geometry(64, 64, mc.detector);
    const auto pyr = forward_backbone(g, store, sc.image, mc.detector);
    const auto f = forward_lgd(g, store, mc, sc, pyr, geo, false);
    std::vector<Tensor> out;
    for (const auto& x : f.instructive) out.push_back(x.value());
    return out;
  };
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scene s = generate_scene(30000 + i, gen);
    const auto base = instructive(s);
    for (int p = 0; p < 5; ++p) {
      Scene moved = s;
      shuffle(moved.annotations, rng);
      const auto got = instructive(moved);
      for (std::size_t l = 0; l < base.size(); ++l) worst = std::max(worst, max_rel_diff(got[l], base[l]));
    }
  }
  return {worst < 1e-6, "20 scenes x 5 permutations, max relative change " + fmt("%.2e", worst) + " (limit 1e-6)"};
}

// ---------------------------------------------------------------------------
// 4. distillation gradients stop at the instructive maps

Outcome detach_contract() {
  ModelConfig mc;
  ParameterStore store;
  init_model(store, mc, 41);
  const Scene s = generate_scene(40000, GenConfig{});
  Graph g;
  auto f = forward_scene(g, store, mc, s, true);
  g.backward(f.distill);
  std::size_t leaking = 0, lgd_checked = 0;
  bool adapt = false, backbone = false;
  std::string first_leak;
  for (auto& [name, e] : store.entries()) {
    const bool nonzero = !all_zero(e.value.grad());
    if (has_prefix(name, "lgd.adapt.")) {
      adapt = adapt || nonzero;
    } else if (has_prefix(name, "lgd.")) {
      ++lgd_checked;
      if (nonzero) {
        ++leaking;
        if (first_leak.empty()) first_leak = name;
      }
    }
    if (is_backbone_param(name)) backbone = backbone || nonzero;
  }
  std::string detail = std::to_string(lgd_checked) + " lgd tensors outside the adapter, " + std::to_string(leaking) +
                       " with nonzero gradient";
  if (!first_leak.empty()) detail += " (first: " + first_leak + ")";
  detail += std::string("; adapter gradient ") + (adapt ? "nonzero" : "zero") + ", backbone gradient " +
            (backbone ? "nonzero" : "zero");
  return {leaking == 0 && adapt && backbone, detail};
}

// ---------------------------------------------------------------------------
// 5. brute-force oracles

Outcome oracles() {
  Rng rng(51);
  std::size_t pool_ok = 0, match_ok = 0, ap_ok = 0;
  for (int t = 0; t < 200; ++t) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(1, 8)), w = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 6)), n = static_cast<std::size_t>(rng.uniform_int(1, 6));
    // Dyadic features keep every partial sum exact, so summation order cannot matter.
    Tensor x({h, w, c});
    for (auto& v : x.values()) v = static_cast<double>(rng.uniform_int(-512, 512)) / 64.0;
    Tensor m({n, h * w});
    for (auto& v : m.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Graph g;
    if (mask_pool(g.constant(x), m).value() == lgd::testing::oracle_mask_pool(x, m)) ++pool_ok;
  }
  auto random_box = [&] {
    const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
    return Box{x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20)};
  };
  for (int t = 0; t < 100; ++t) {
    std::vector<Box> gts;
    const auto ng = rng.uniform_int(0, 5);
    for (int i = 0; i < ng; ++i) gts.push_back(random_box());
    std::vector<Detection> dets;
    const auto nd = rng.uniform_int(0, 5);
    for (int i = 0; i < nd; ++i) {
      Box b = random_box();
      if (ng > 0 && rng.uniform() < 0.7) {
        b = gts[static_cast<std::size_t>(rng.uniform_int(0, ng - 1))];
        b = {b.x1 + rng.uniform(-3, 3), b.y1 + rng.uniform(-3, 3), b.x2 + rng.uniform(-3, 3), b.y2 + rng.uniform(-3, 3)};
      }
      dets.push_back({b, 0, std::round(rng.uniform() * 4) / 4});
    }
    bool same = true;
    for (double thr : {0.5, 0.75}) same = same && greedy_match(dets, gts, thr) == lgd::testing::oracle_match(dets, gts, thr);
    match_ok += same;
    if (ng > 0) {
      std::vector<std::pair<double, bool>> scored;
      const auto match = greedy_match(dets, gts, 0.5);
      for (std::size_t i = 0; i < dets.size(); ++i) scored.emplace_back(dets[i].score, match[i] >= 0);
      const auto n_gt = static_cast<std::size_t>(ng);
      ap_ok += interpolated_ap(scored, n_gt) == lgd::testing::oracle_ap(scored, n_gt);
    } else {
      ++ap_ok;
    }
  }
  return {pool_ok == 200 && match_ok == 100 && ap_ok == 100,
          "mask-pool " + std::to_string(pool_ok) + "/200 exact, matcher " + std::to_string(match_ok) +
              "/100 exact, AP " + std::to_string(ap_ok) + "/100 exact"};
}

// ---------------------------------------------------------------------------
// 6 + 7. schedule contract and inference purity share one 180-iteration run

struct ScheduleRun {
  Outcome schedule;
  ParameterStore params;
  std::size_t total = 0;
};

ScheduleRun schedule_contract() {
  const auto t0 = Clock::now();
  RunConfig rc;
  rc.trainer.total_iters = 180;
  rc.data.train_count = 64;
  const ModelConfig mc = rc.model_config();
  const TrainConfig tc = rc.train_config();
  const auto scenes = generate_scenes(rc.data.train_seed, rc.data.train_count, rc.gen);
  const Schedule sched(tc);

  ScheduleRun out;
  init_model(out.params, mc, tc.seed);
  auto backbone = [&] {
    std::vector<Tensor> v;
    for (auto& [name, e] : out.params.entries()) {
      if (is_backbone_param(name)) v.push_back(e.value);
    }
    return v;
  };
  const auto initial = backbone();
  bool zero_before = true, positive_after = true, frozen_exact = true, moved_after = false;
  std::size_t cursor = 0;
  for (std::size_t it = 0; it < tc.total_iters; ++it) {
    std::vector<const Scene*> batch;
    for (std::size_t b = 0; b < tc.batch_size; ++b) batch.push_back(&scenes[cursor++ % scenes.size()]);
    const LossReport r = train_step(out.params, mc, sched, tc, batch, it);
    if (it < sched.distill_start) {
      zero_before = zero_before && r.distill == 0.0;
    } else {
      positive_after = positive_after && r.distill > 0.0;
    }
    if (it < sched.freeze_end) {
      frozen_exact = frozen_exact && backbone() == initial;
    } else if (!moved_after) {
      moved_after = backbone() != initial;
    }
  }
  out.total = tc.total_iters;
  out.schedule = {zero_before && positive_after && frozen_exact && moved_after,
                  "distill starts at " + std::to_string(sched.distill_start) + ": zero before " +
                      (zero_before ? "yes" : "no") + ", positive after " + (positive_after ? "yes" : "no") +
                      "; backbone bit-identical through iteration " + std::to_string(sched.freeze_end) + " " +
                      (frozen_exact ? "yes" : "no") + ", moves afterwards " + (moved_after ? "yes" : "no") + " (" +
                      fmt("%.0f", seconds_since(t0)) + " s)"};
  return out;
}

Outcome inference_purity(const ParameterStore& params, std::size_t iters, const fs::path& dir) {
  fs::create_directories(dir);
  const auto full_path = (dir / checkpoint_name(iters)).string();
  const auto student_path = (dir / kStudentExport).string();
  write_tensors(full_path, full_state(params, iters));
  write_tensors(student_path, student_only(params));
  const auto student = read_tensors(student_path);
  std::size_t lgd_tensors = 0;
  for (const auto& t : student) lgd_tensors += has_prefix(t.name, "lgd.");
  RunConfig rc;
  const auto val = generate_scenes(rc.data.val_seed, rc.data.val_count, rc.gen);
  const EvalResult a = evaluate_checkpoint(student, val), b = evaluate_checkpoint(read_tensors(full_path), val);
  const double delta = a.ap - b.ap, delta50 = a.ap50 - b.ap50;
  return {lgd_tensors == 0 && a == b, std::to_string(lgd_tensors) + " lgd tensors in the export; AP " +
                                          fmt("%.4f", a.ap) + " vs " + fmt("%.4f", b.ap) + " (delta " +
                                          fmt("%g", delta) + "), AP50 delta " + fmt("%g", delta50)};
}

// ---------------------------------------------------------------------------
// 8. desk-scale efficacy

Outcome efficacy(std::size_t iters, std::size_t seeds, const fs::path& dir) {
  RunConfig rc;
  rc.trainer.total_iters = iters;
  const auto train = generate_scenes(rc.data.train_seed, rc.data.train_count, rc.gen);
  const auto val = generate_scenes(rc.data.val_seed, rc.data.val_count, rc.gen);
  std::vector<RunPair> pairs;
  double slowest = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    RunPair p{seed, {}, {}};
    for (Mode mode : {Mode::kBaseline, Mode::kLgd}) {
      rc.mode = mode;
      rc.seed = seed;
      const fs::path out = dir / ("seed" + std::to_string(seed) + "_" + to_string(mode));
      fs::create_directories(out);
      write_resolved(out / kConfigResolved, rc);
      const auto t0 = Clock::now();
      run_training(rc.model_config(), rc.train_config(), train, out.string());
      const double secs = seconds_since(t0);
      slowest = std::max(slowest, secs);
      (mode == Mode::kBaseline ? p.baseline_ckpt : p.lgd_ckpt) = (out / kStudentExport).string();
      std::cout << "  seed " << seed << " " << to_string(mode) << ": " << fmt("%.0f", secs) << " s" << std::endl;
    }
    pairs.push_back(p);
  }
  const Comparison cmp = compare_runs(pairs, val);
  std::ofstream(dir / "compare.json") << cmp.to_json().dump(2) << '\n';
  std::istringstream table(cmp.table());
  for (std::string line; std::getline(table, line);) std::cout << "  " << line << '\n';
  std::string per_seed;
  for (const auto& r : cmp.rows) per_seed += (per_seed.empty() ? "" : ", ") + fmt("%+.4f", r.delta_ap50());
  const bool ok = cmp.median_lgd_ap50() >= cmp.median_baseline_ap50() && cmp.median_delta_ap50() >= 0.0 &&
                  slowest < 1800.0;
  return {ok, "median AP50 lgd " + fmt("%.4f", cmp.median_lgd_ap50()) + " vs baseline " +
                  fmt("%.4f", cmp.median_baseline_ap50()) + ", median delta " + fmt("%+.4f", cmp.median_delta_ap50()) +
                  " (per seed: " + per_seed + "), slowest run " + fmt("%.0f", slowest) + " s (limit 1800 s)"};
}

// ---------------------------------------------------------------------------
// 9. ablation switches

Outcome ablations(std::size_t iters, const fs::path& dir) {
  RunConfig base;
  base.trainer.total_iters = iters;
  const auto train = generate_scenes(base.data.train_seed, base.data.train_count, base.gen);
  const auto val = generate_scenes(base.data.val_seed, base.data.val_count, base.gen);
  auto run = [&](const std::string& name, RunConfig rc) {
    const fs::path out = dir / name;
    fs::create_directories(out);
    write_resolved(out / kConfigResolved, rc);
    run_training(rc.model_config(), rc.train_config(), train, out.string());
    return evaluate_checkpoint(read_tensors((out / kStudentExport).string()), val);
  };
  struct Variant {
    std::string name, on, off;
    std::function<void(RunConfig&)> flip;
  };
  const std::vector<Variant> variants{
      {"head", "shared", "unshared", [](RunConfig& c) { c.model.lgd.head_sharing = false; }},
      {"context", "on", "off", [](RunConfig& c) { c.model.lgd.context_participation = false; }},
      {"query", "student", "label", [](RunConfig& c) { c.model.lgd.query = QueryDirection::kLabel; }},
      {"encoder", "pointnet-lite", "mlp", [](RunConfig& c) { c.model.lgd.encoder = EncoderKind::kMlp; }},
  };
  try {
    const EvalResult ref = run("reference", base);
    std::string summary;
    bool finite = std::isfinite(ref.ap50);
    for (const auto& v : variants) {
      RunConfig rc = base;
      v.flip(rc);
      const EvalResult r = run(v.name + "_" + v.off, rc);
      finite = finite && std::isfinite(r.ap50);
      std::cout << "  " << v.name << ": " << v.on << " AP50 " << fmt("%.4f", ref.ap50) << " AP " << fmt("%.4f", ref.ap)
                << " | " << v.off << " AP50 " << fmt("%.4f", r.ap50) << " AP " << fmt("%.4f", r.ap) << std::endl;
      summary += (summary.empty() ? "" : ", ") + v.name + " " + v.off + " " + fmt("%+.4f", r.ap50 - ref.ap50);
    }
    return {finite, "4 comparisons at " + std::to_string(iters) + " iterations, AP50 change vs reference: " + summary};
  } catch (const std::exception& e) {
    return {false, std::string("ablation run threw: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::size_t iters = 2000, ablation_iters = 300, seeds = 3;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--iters", iters, "Training iterations for the efficacy runs")->capture_default_str();
  app.add_option("--ablation-iters", ablation_iters, "Training iterations per ablation run")->capture_default_str();
  app.add_option("--seeds", seeds, "Seeds for the efficacy comparison")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  const fs::path dir = output_path("acceptance_runs");
  int failures = 0;
  auto report = [&](int k, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << k << " " << name << ": " << o.detail << std::endl;
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("threw: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "gradient suite", guarded(gradient_suite));
  if (wanted(2)) report(2, "attention rows stochastic", guarded(row_stochastic));
  if (wanted(3)) report(3, "permutation invariance", guarded(permutation_invariance));
  if (wanted(4)) report(4, "detach contract", guarded(detach_contract));
  if (wanted(5)) report(5, "oracle equivalence", guarded(oracles));
  if (wanted(6) || wanted(7)) {
    ScheduleRun run;
    const Outcome sched = guarded([&] {
      run = schedule_contract();
      return run.schedule;
    });
    if (wanted(6)) report(6, "schedule contract", sched);
    if (wanted(7)) {
      report(7, "inference purity",
             run.total ? guarded([&] { return inference_purity(run.params, run.total, dir / "schedule_run"); })
                       : Outcome{false, "schedule run did not complete"});
    }
  }
  if (wanted(8)) report(8, "desk-scale efficacy", guarded([&] { return efficacy(iters, seeds, dir / "efficacy"); }));
  if (wanted(9)) report(9, "ablation switches", guarded([&] { return ablations(ablation_iters, dir / "ablations"); }));
  return failures == 0 ? 0 : 1;
}
