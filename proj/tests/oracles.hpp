#pragma once

// Brute-force references shared by the unit tests and the acceptance run.

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "lgd/detector.hpp"
#include "lgd/scene.hpp"
#include "lgd/tensor.hpp"

namespace lgd::testing {

// Same greedy rule, phrased as accepting (detection, ground truth) pairs in
// lexicographic order of (score rank, IoU descending, ground-truth index).
inline std::vector<int> oracle_match(const std::vector<Detection>& dets, const std::vector<Box>& gts, double thr) {
  struct Pair {
    std::size_t rank, d, g;
    double o;
  };
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::vector<Pair> pairs;
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(dets[order[r]].box, gts[g]);
      if (o >= thr) pairs.push_back({r, order[r], g, o});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.o != b.o) return a.o > b.o;
    return a.g < b.g;
  });
  std::vector<int> match(dets.size(), -1);
  std::vector<bool> used(gts.size(), false);
  for (const auto& p : pairs) {
    if (match[p.d] >= 0 || used[p.g]) continue;
    match[p.d] = static_cast<int>(p.g);
    used[p.g] = true;
  }
  return match;
}

// Interpolated precision straight from its definition: at each recall level
// the best precision over every cutoff reaching that recall.
inline double oracle_ap(std::vector<std::pair<double, bool>> scored, std::size_t num_gt) {
  std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
  double total = 0;
  for (int k = 0; k <= 100; ++k) {
    double best = 0;
    for (std::size_t cut = 1; cut <= scored.size(); ++cut) {
      std::size_t tp = 0;
      for (std::size_t i = 0; i < cut; ++i) tp += scored[i].second;
      if (static_cast<double>(tp) / num_gt >= k / 100.0 - 1e-12) best = std::max(best, double(tp) / cut);
    }
    total += best;
  }
  return total / 101.0;
}

// Sum-pooling by explicit loops over rows, columns and channels.
inline Tensor oracle_mask_pool(const Tensor& x, const Tensor& masks) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), n = masks.dim(0);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) acc += masks.at(i, r * w + col) * x.at(r, col, ch);
      }
      out.at(i, ch) = acc;
    }
  }
  return out;
}

}  // namespace lgd::testing
