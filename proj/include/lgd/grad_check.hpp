#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lgd/graph.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Lower bound on the relative-error denominator; below it the error is
  /// effectively absolute.
  double floor = 1e-6;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor index>[<element>]: analytic vs numeric"
};

/// Compares the analytic gradient of a scalar loss against central finite
/// differences for every element of `params`.
///
/// `loss` builds the loss on a fresh graph, binding the tensors in `params`
/// itself (via Graph::param). Values passed through `detach` are recorded on
/// the analytic pass and replayed unchanged on perturbed passes, so the
/// numeric derivative honours stop-gradient semantics.
inline GradCheckReport grad_check(const std::function<Var(Graph&)>& loss,
                                  const std::vector<Tensor*>& params,
                                  const GradCheckOptions& opt = {}) {
  std::vector<Buffer> saved_grads;
  std::vector<bool> saved_flags;
  for (Tensor* p : params) {
    saved_grads.emplace_back(p->grad().begin(), p->grad().end());
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->ensure_grad();
    p->zero_grad();
  }

  DetachLog log;
  {
    Graph g;
    g.set_detach_log(&log);
    Var l = loss(g);
    g.backward(l);
  }
  std::vector<Buffer> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  auto evaluate = [&]() {
    log.mode = DetachLog::Mode::kReplay;
    log.cursor = 0;
    Graph g;
    g.set_detach_log(&log);
    return loss(g).value()[0];
  };

  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto vals = params[t]->values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + opt.step;
      const double up = evaluate();
      vals[i] = orig - opt.step;
      const double down = evaluate();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (!(rel <= report.max_rel_err) || !std::isfinite(rel)) {
        report.max_rel_err = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst = std::to_string(t) + "[" + std::to_string(i) + "]: " + std::to_string(a) + " vs " +
                       std::to_string(numeric);
      }
    }
  }
  report.passed = report.max_rel_err < opt.tol;

  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t]->set_requires_grad(saved_flags[t]);
    if (saved_grads[t].empty()) {
      params[t]->drop_grad();
    } else {
      std::copy(saved_grads[t].begin(), saved_grads[t].end(), params[t]->grad().begin());
    }
  }
  return report;
}

}  // namespace lgd
