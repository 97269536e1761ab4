#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cployo/nn.hpp"

namespace cployo {

struct GradCheckOptions {
  double step = 1e-4;
  // Coordinates sampled per tensor; tensors at or below this size are checked
  // exhaustively. Bounds runtime on wide blocks without losing wiring coverage.
  int max_coords = 24;
  double denom_floor = 1e-8;
  // Central differences with the step above resolve derivatives to roughly
  // h^2 * f''' ~ 1e-9 absolute; differences below this floor are indistinguishable
  // from truncation error and are not graded in relative terms.
  double abs_floor = 3e-9;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares analytic gradients of a scalar sum-loss against central finite
// differences for every leaf listed (inputs and parameters alike).
// `fwd` must rebuild the graph from the current leaf values on each call.
inline GradCheckReport grad_check(const std::function<Var<double>()>& fwd,
                                  const ParamList<double>& leaves, Rng& rng,
                                  const GradCheckOptions& opt = {}) {
  for (const auto& l : leaves) l.var->zero_grad();
  Var<double> loss = sum_all(fwd());
  backward(loss);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) {
    if (l.var->grad_set()) {
      if (!l.var->grad().all_finite()) throw NumericError("non-finite gradient in " + l.name);
      analytic.push_back(l.var->grad());
    } else {
      analytic.push_back(Tensor<double>(l.var->value().dims()));
    }
  }

  auto eval = [&]() -> double {
    NoGradGuard ng;
    Var<double> out = fwd();
    double acc = 0.0;
    const double* p = out.value().data();
    for (std::int64_t i = 0; i < out.value().numel(); ++i) acc += p[i];
    return acc;
  };

  GradCheckReport rep;
  const double h = opt.step;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>& val = leaves[li].var->value();
    const std::int64_t n = val.numel();
    std::vector<std::int64_t> coords;
    if (n <= opt.max_coords) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < opt.max_coords; ++i) coords.push_back(rng.uniform_int(n));
    }
    for (std::int64_t c : coords) {
      const double orig = val[c];
      val[c] = orig + h;
      const double fp = eval();
      val[c] = orig - h;
      const double fm = eval();
      val[c] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[li][c];
      if (std::abs(ana - num) < opt.abs_floor) continue;
      const double denom = std::max({std::abs(ana), std::abs(num), opt.denom_floor});
      const double rel = std::abs(ana - num) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = leaves[li].name;
        rep.worst_coord = c;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace cployo
