#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lfit/tensor.hpp"

namespace lfit {

/// Relative error with the denominator max(|analytic|, |numeric|, 1e-8).
template <typename S>
S relative_error(S analytic, S numeric) {
  const S denom = std::max({std::abs(analytic), std::abs(numeric), S(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of a scalar map against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h and returns the largest relative error.
template <typename S>
S check_gradient(const std::function<BasicTensor<S>(const BasicTensor<S>&)>& f, const BasicTensor<S>& x, S step) {
  if (!(step > S(0))) throw ContractError("check_gradient: step must be positive");
  GradTape<S> tape;
  const BasicTensor<S> leaf = x.detach().track(tape);
  const BasicTensor<S> y = f(leaf);
  if (y.numel() != 1) throw ContractError("check_gradient: f must be scalar-valued");
  if (!y.tracked()) throw ContractError("check_gradient: f does not depend on its input");
  tape.backward(y.node());
  const RowMatrix<S> analytic = tape.gradient(leaf.node());

  S worst = 0;
  RowMatrix<S> probe = x.value();
  for (Index i = 0; i < probe.size(); ++i) {
    const S saved = probe.data()[i];
    probe.data()[i] = saved + step;
    const S up = f(BasicTensor<S>(x.shape(), probe)).item();
    probe.data()[i] = saved - step;
    const S down = f(BasicTensor<S>(x.shape(), probe)).item();
    probe.data()[i] = saved;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (S(2) * step)));
  }
  return worst;
}

/// Same check for a loss built from trainable parameters. `loss` must build a
/// fresh forward pass on the graph it is handed. When `max_per_param` is
/// positive only that many evenly spaced coordinates of each parameter are
/// probed.
template <typename S>
S check_parameter_gradient(const std::function<BasicTensor<S>(BasicGraph<S>&)>& loss,
                           const std::vector<BasicParameter<S>*>& params, S step, Index max_per_param = 0) {
  if (!(step > S(0))) throw ContractError("check_parameter_gradient: step must be positive");
  BasicGradients<S> grads;
  {
    auto graph = BasicGraph<S>::recording();
    grads = graph.backward(loss(graph));
  }
  S worst = 0;
  for (auto* p : params) {
    const RowMatrix<S> analytic = grads.get(*p);
    const Index n = p->value.size();
    const Index probes = (max_per_param > 0) ? std::min(n, max_per_param) : n;
    for (Index k = 0; k < probes; ++k) {
      const Index i = (probes == n) ? k : (k * n) / probes;
      S& slot = p->value.data()[i];
      const S saved = slot;
      BasicGraph<S> g_up;
      slot = saved + step;
      const S up = loss(g_up).item();
      BasicGraph<S> g_down;
      slot = saved - step;
      const S down = loss(g_down).item();
      slot = saved;
      worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (S(2) * step)));
    }
  }
  return worst;
}

}  // namespace lfit
