#pragma once
// Central finite-difference gradient checking. The numeric side only ever
// re-evaluates the supplied loss closure, so it stays independent of the
// backward rules it is used to verify.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "co4/tensor.hpp"

namespace co4 {

struct GradCheckParam {
  std::string name;
  Array<double>* value;               // perturbed in place, restored after
  const Array<double>* analytic_grad; // same shape as value
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool nonfinite = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline double rel_err(double a, double b) {
  double d = std::abs(a - b);
  double den = std::max({std::abs(a), std::abs(b), 1e-8});
  return d / den;
}

// f() must evaluate the scalar loss from the *current* contents of every
// param array. stride > 1 checks a deterministic subsample of coordinates.
inline GradCheckReport grad_check(const std::function<double()>& f,
                                  const std::vector<GradCheckParam>& params,
                                  double h, double tol,
                                  std::size_t stride = 1) {
  if (h <= 0) throw InputError("grad_check: h must be positive");
  GradCheckReport report;
  for (const auto& p : params) {
    GradCheckEntry e;
    e.name = p.name;
    auto& vals = p.value->data;
    for (std::size_t i = 0; i < vals.size(); i += stride) {
      double orig = vals[i];
      vals[i] = orig + h;
      double fp = f();
      vals[i] = orig - h;
      double fm = f();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        e.nonfinite = true;
        e.worst_index = i;
        e.max_rel_err = std::numeric_limits<double>::infinity();
        break;
      }
      double fd = (fp - fm) / (2.0 * h);
      double err = rel_err(p.analytic_grad->data[i], fd);
      if (err > e.max_rel_err) {
        e.max_rel_err = err;
        e.worst_index = i;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.entries.push_back(std::move(e));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace co4
