#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lgd/detector.hpp"
#include "lgd/model.hpp"
#include "lgd/scene.hpp"
#include "lgd/serialize.hpp"

namespace lgd {

/// Greedy matching for one image and one class: detections are visited in
/// descending score order and each takes the unmatched ground truth of
/// highest IoU, provided IoU >= threshold. Returns the matched ground-truth
/// index per detection (input order) or -1.
inline std::vector<int> greedy_match(const std::vector<Detection>& dets, const std::vector<Box>& gts,
                                     double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<int> match(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (auto d : order) {
    double best = iou_threshold;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(dets[d].box, gts[g]);
      if (o >= best) {
        // Strictly better IoU wins; the first ground truth keeps ties.
        if (best_gt == -1 || o > best) {
          best = o;
          best_gt = static_cast<int>(g);
        }
      }
    }
    if (best_gt >= 0) {
      taken[static_cast<std::size_t>(best_gt)] = true;
      match[d] = best_gt;
    }
  }
  return match;
}

/// 101-point interpolated average precision from per-detection (score, TP)
/// pairs pooled over images, against `num_gt` ground truths.
inline double interpolated_ap(std::vector<std::pair<double, bool>> scored, std::size_t num_gt) {
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (const auto& [_, hit] : scored) {
    (hit ? tp : fp) += 1.0;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(num_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

/// Per-class AP at one IoU threshold; NaN for classes without ground truth.
inline std::vector<double> compute_ap(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<Annotation>>& gts, int num_classes,
                                      double iou_threshold) {
  if (dets.size() != gts.size()) throw std::invalid_argument("compute_ap: image count mismatch");
  std::vector<double> out;
  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<std::pair<double, bool>> scored;
    std::size_t num_gt = 0;
    for (std::size_t img = 0; img < dets.size(); ++img) {
      std::vector<Detection> d;
      std::vector<Box> g;
      for (const auto& x : dets[img]) {
        if (x.category == cls) d.push_back(x);
      }
      for (const auto& a : gts[img]) {
        if (a.category == cls) g.push_back(a.box);
      }
      num_gt += g.size();
      const auto match = greedy_match(d, g, iou_threshold);
      for (std::size_t k = 0; k < d.size(); ++k) scored.emplace_back(d[k].score, match[k] >= 0);
    }
    out.push_back(interpolated_ap(std::move(scored), num_gt));
  }
  return out;
}

inline double mean_defined(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

struct EvalResult {
  double ap50 = 0.0;
  double ap = 0.0;  // mean over IoU 0.50:0.05:0.95
  std::vector<double> per_class_ap;
  std::vector<double> per_class_ap50;
  std::size_t num_detections = 0;
  std::size_t num_gt = 0;
  friend bool operator==(const EvalResult& a, const EvalResult& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
      }
      return true;
    };
    return a.ap50 == b.ap50 && a.ap == b.ap && same(a.per_class_ap, b.per_class_ap) &&
           same(a.per_class_ap50, b.per_class_ap50) && a.num_detections == b.num_detections &&
           a.num_gt == b.num_gt;
  }
};

inline EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<Annotation>>& gts, int num_classes) {
  EvalResult r;
  for (const auto& d : dets) r.num_detections += d.size();
  for (const auto& g : gts) r.num_gt += g.size();
  std::vector<double> class_sum(static_cast<std::size_t>(num_classes), 0.0);
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    auto per_class = compute_ap(dets, gts, num_classes, thr);
    if (t == 0) r.per_class_ap50 = per_class;
    for (std::size_t c = 0; c < per_class.size(); ++c) class_sum[c] += per_class[c];
  }
  for (double s : class_sum) r.per_class_ap.push_back(s / 10.0);  // NaN stays NaN
  r.ap50 = mean_defined(r.per_class_ap50);
  r.ap = mean_defined(r.per_class_ap);
  return r;
}

inline nlohmann::json to_json(const EvalResult& r) {
  auto arr = [](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
    return a;
  };
  return {{"ap50", r.ap50},
          {"ap", r.ap},
          {"per_class_ap", arr(r.per_class_ap)},
          {"per_class_ap50", arr(r.per_class_ap50)},
          {"num_detections", r.num_detections},
          {"num_gt", r.num_gt}};
}

/// Evaluates the student path of a checkpoint (full or student-only) on
/// regenerated scenes. Only "student.*" and "head.*" tensors are loaded.
inline EvalResult evaluate_checkpoint(const std::vector<NamedTensor>& tensors, const std::vector<Scene>& scenes,
                                      const DecodeOptions& opt = {}) {
  ParameterStore store = store_from_tensors(tensors, is_student_tensor);
  const DetectorConfig cfg = infer_detector_config(store);
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Annotation>> gts;
  for (const auto& s : scenes) {
    dets.push_back(predict(store, cfg, s.image, opt));
    gts.push_back(s.annotations);
  }
  return evaluate_detections(dets, gts, cfg.num_classes);
}

struct RunPair {
  std::uint64_t seed = 0;
  std::string baseline_ckpt;
  std::string lgd_ckpt;
};

struct ComparisonRow {
  std::uint64_t seed = 0;
  EvalResult baseline;
  EvalResult lgd;
  double delta_ap50() const { return lgd.ap50 - baseline.ap50; }
  double delta_ap() const { return lgd.ap - baseline.ap; }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Comparison {
  std::vector<ComparisonRow> rows;

  double median_of(double (*get)(const ComparisonRow&)) const {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(get(r));
    return median(std::move(v));
  }
  double median_baseline_ap50() const { return median_of([](const ComparisonRow& r) { return r.baseline.ap50; }); }
  double median_lgd_ap50() const { return median_of([](const ComparisonRow& r) { return r.lgd.ap50; }); }
  double median_baseline_ap() const { return median_of([](const ComparisonRow& r) { return r.baseline.ap; }); }
  double median_lgd_ap() const { return median_of([](const ComparisonRow& r) { return r.lgd.ap; }); }
  double median_delta_ap50() const { return median_of([](const ComparisonRow& r) { return r.delta_ap50(); }); }
  double median_delta_ap() const { return median_of([](const ComparisonRow& r) { return r.delta_ap(); }); }

  /// {"runs": [{"seed", "baseline": {"ap50", "ap"}, "lgd": {...}, "delta": {...}}], "median": {...}}
  nlohmann::json to_json() const {
    auto pair = [](double ap50, double ap) { return nlohmann::json{{"ap50", ap50}, {"ap", ap}}; };
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : rows) {
      runs.push_back({{"seed", r.seed},
                      {"baseline", pair(r.baseline.ap50, r.baseline.ap)},
                      {"lgd", pair(r.lgd.ap50, r.lgd.ap)},
                      {"delta", pair(r.delta_ap50(), r.delta_ap())}});
    }
    return {{"runs", runs},
            {"median",
             {{"baseline", pair(median_baseline_ap50(), median_baseline_ap())},
              {"lgd", pair(median_lgd_ap50(), median_lgd_ap())},
              {"delta", pair(median_delta_ap50(), median_delta_ap())}}}};
  }

  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "seed      base.AP50  base.AP    lgd.AP50   lgd.AP     dAP50      dAP\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(10) << r.seed << std::right << std::setw(9) << r.baseline.ap50 << "  "
         << std::setw(9) << r.baseline.ap << "  " << std::setw(9) << r.lgd.ap50 << "  " << std::setw(9) << r.lgd.ap
         << "  " << std::showpos << std::setw(9) << r.delta_ap50() << "  " << std::setw(9) << r.delta_ap()
         << std::noshowpos << '\n';
    }
    os << std::left << std::setw(10) << "median" << std::right << std::setw(9) << median_baseline_ap50() << "  "
       << std::setw(9) << median_baseline_ap() << "  " << std::setw(9) << median_lgd_ap50() << "  " << std::setw(9)
       << median_lgd_ap() << "  " << std::showpos << std::setw(9) << median_delta_ap50() << "  " << std::setw(9)
       << median_delta_ap() << std::noshowpos << '\n';
    return os.str();
  }
};

inline Comparison compare_runs(const std::vector<RunPair>& pairs, const std::vector<Scene>& valset,
                               const DecodeOptions& opt = {}) {
  Comparison c;
  for (const auto& p : pairs) {
    ComparisonRow row;
    row.seed = p.seed;
    row.baseline = evaluate_checkpoint(read_tensors(p.baseline_ckpt), valset, opt);
    row.lgd = evaluate_checkpoint(read_tensors(p.lgd_ckpt), valset, opt);
    c.rows.push_back(row);
  }
  return c;
}

}  // namespace lgd
