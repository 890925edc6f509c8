#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "edgespot/ops.hpp"
#include "edgespot/rng.hpp"

namespace edgespot {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> relative_errors;
  double max_relative_error = 0;
  std::size_t worst = 0;
  double tolerance = 0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps vanishing gradients from
/// turning round-off into huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// A single probed element: (input index, flat element index).
using GradProbe = std::pair<std::size_t, std::size_t>;

/// Compares the analytic gradient of a scalar loss with central finite
/// differences. `loss` must rebuild the graph from the current contents of
/// `inputs` each call. Every element is probed unless `probes` is given.
inline GradCheckReport gradient_check(const std::function<Tensor<double>()>& loss,
                                      std::vector<Tensor<double>> inputs, double eps = 1e-5,
                                      double tolerance = 1e-3, std::vector<GradProbe> probes = {}) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> l = loss();
  if (!std::isfinite(l.item())) throw NumericError("gradient_check: non-finite loss at base point");
  l.backward();
  if (probes.empty())
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t j = 0; j < inputs[i].numel(); ++j) probes.emplace_back(i, j);

  GradCheckReport rep;
  rep.tolerance = tolerance;
  NoGradGuard guard;
  for (auto [i, j] : probes) {
    auto g = inputs[i].grad();
    const double a = g.empty() ? 0.0 : g[j];
    auto d = inputs[i].mutable_data();
    const double x0 = d[j];
    d[j] = x0 + eps;
    const double fp = loss().item();
    d[j] = x0 - eps;
    const double fm = loss().item();
    d[j] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a))
      throw NumericError("gradient_check: non-finite value probing input " + std::to_string(i) + "[" +
                         std::to_string(j) + "]");
    const double n = (fp - fm) / (2 * eps);
    rep.analytic.push_back(a);
    rep.numeric.push_back(n);
    const double e = relative_error(a, n);
    rep.relative_errors.push_back(e);
    if (e > rep.max_relative_error || rep.relative_errors.size() == 1) {
      rep.max_relative_error = e;
      rep.worst = rep.relative_errors.size() - 1;
    }
  }
  rep.passed = rep.max_relative_error < tolerance;
  return rep;
}

/// Checks a tensor -> tensor op at `point`. The output is reduced to a scalar
/// through fixed pseudo-random weights so that every output element carries
/// a distinct gradient.
template <class Op>
GradCheckReport gradient_check_op(Op&& op, Tensor<double> point, double eps = 1e-5, double tolerance = 1e-3) {
  Tensor<double> weights;
  auto loss = [&]() {
    Tensor<double> y = op(point);
    if (!weights.defined() || weights.numel() != y.numel()) {
      Rng rng(0x5EEDULL);
      std::vector<double> w(y.numel());
      for (auto& v : w) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1);
      weights = Tensor<double>(y.shape(), std::move(w));
    }
    return sum(mul(y, weights));
  };
  return gradient_check(loss, {point}, eps, tolerance);
}

}  // namespace edgespot
