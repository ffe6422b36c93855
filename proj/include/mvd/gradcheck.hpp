#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mvd/error.hpp"
#include "mvd/params.hpp"
#include "mvd/random.hpp"

namespace mvd {

/// Evaluates the loss at the store's current values. With `backward`
/// set it must also accumulate analytic gradients into the store.
using LossClosure = std::function<double(ParamStore&, bool backward)>;

/// Loss value plus the tape's branch signature.
struct LossEval {
  double value = 0.0;
  std::uint64_t branches = 0;
};
using BranchedLossClosure = std::function<LossEval(ParamStore&, bool backward)>;

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_per_tensor = 200;  // larger tensors are sampled
  std::uint64_t seed = 0;
  double abs_floor = 1e-5;  // denominator floor for near-zero gradients
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t one_sided = 0;  // a kink lay within h on one side
  std::size_t skipped = 0;    // kinks within h on both sides
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t one_sided = 0;
  std::size_t skipped = 0;
  bool passed = false;

  std::string summary() const {
    std::string out;
    char buf[256];
    for (const auto& t : tensors) {
      std::snprintf(buf, sizeof buf,
                    "%-16s checked %5zu  one-sided %3zu  skipped %3zu  max rel err %.3e  (analytic %.6e, numeric %.6e)\n",
                    t.name.c_str(), t.checked, t.one_sided, t.skipped, t.max_rel_error, t.analytic, t.numeric);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "overall: %zu entries (%zu one-sided, %zu skipped), max rel err %.3e -> %s\n",
                  checked, one_sided, skipped, max_rel_error, passed ? "PASS" : "FAIL");
    out += buf;
    return out;
  }
};

/// Central differences (f(x+h) - f(x-h)) / 2h against the analytic gradient,
/// relative error |a - n| / max(|a|, |n|, abs_floor). When a branch
/// signature changes on one side, the second-order one-sided difference
/// on the other side is used; entries with kinks on both sides are skipped
/// and counted.
inline GradCheckReport grad_check(const BranchedLossClosure& loss, ParamStore& store,
                                  const GradCheckOptions& opt = {}) {
  store.zero_grad();
  const LossEval base = loss(store, true);
  if (!std::isfinite(base.value)) throw NonFiniteLoss("loss is not finite at the check point");
  std::vector<Tensor2> analytic;
  for (const auto& p : store.params()) analytic.push_back(p.grad);
  store.zero_grad();

  GradCheckReport report;
  Rng rng(opt.seed);
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto& param = store[pi];
    const std::size_t n = param.value.size();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (n > opt.max_per_tensor) {
      rng.shuffle(entries);
      entries.resize(opt.max_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    TensorCheck tc;
    tc.name = param.name;
    const double saved_h = opt.h;
    for (auto e : entries) {
      const double saved = param.value[e];
      auto at = [&](double offset) {
        param.value[e] = saved + offset;
        const LossEval r = loss(store, false);
        param.value[e] = saved;
        if (!std::isfinite(r.value)) throw NonFiniteLoss("loss not finite near " + param.name);
        return r;
      };
      const LossEval fp = at(saved_h), fm = at(-saved_h);
      double num;
      if (fp.branches == base.branches && fm.branches == base.branches) {
        num = (fp.value - fm.value) / (2.0 * saved_h);
      } else {
        const double dir = fp.branches == base.branches ? 1.0 : -1.0;
        const LossEval& f1 = dir > 0 ? fp : fm;
        const LossEval f2 = at(2.0 * dir * saved_h);
        if (f1.branches != base.branches || f2.branches != base.branches) {
          ++tc.skipped;
          continue;
        }
        num = dir * (-3.0 * base.value + 4.0 * f1.value - f2.value) / (2.0 * saved_h);
        ++tc.one_sided;
      }
      const double ana = analytic[pi][e];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), opt.abs_floor});
      if (rel > tc.max_rel_error || tc.checked == 0) {
        tc.max_rel_error = rel;
        tc.worst_index = e;
        tc.analytic = ana;
        tc.numeric = num;
      }
      ++tc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.checked += tc.checked;
    report.one_sided += tc.one_sided;
    report.skipped += tc.skipped;
    report.tensors.push_back(std::move(tc));
  }
  report.passed = report.max_rel_error < opt.tolerance && report.checked > 0;
  return report;
}

/// Plain closures carry no branch information and always use central differences.
inline GradCheckReport grad_check(const LossClosure& loss, ParamStore& store, const GradCheckOptions& opt = {}) {
  return grad_check(BranchedLossClosure([&loss](ParamStore& s, bool backward) {
                      return LossEval{loss(s, backward), 0};
                    }),
                    store, opt);
}

}  // namespace mvd
