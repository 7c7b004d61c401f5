#pragma once

// Central finite differences against the reverse sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fairdet/tensor.hpp"

namespace fairdet::testing {

using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Index checked = 0;
};

inline double scalar_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, false));
  return build(g, leaves).value().item();
}

/// Relative error |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const LossBuilder& build, std::vector<Tensor> inputs, double h = 1e-5,
                                 double floor = 1e-8) {
  Graph g;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, true));
  Var root = build(g, leaves);
  g.backward(root);

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = leaves[k].grad();
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double up = scalar_loss(build, inputs);
      inputs[k][i] = x0 - h;
      const double down = scalar_loss(build, inputs);
      inputs[k][i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double err = std::abs(a - numeric);
      out.max_abs_error = std::max(out.max_abs_error, err);
      out.max_rel_error = std::max(out.max_rel_error, err / std::max({std::abs(a), std::abs(numeric), floor}));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace fairdet::testing
