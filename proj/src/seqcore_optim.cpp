#include "otto/seqcore/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace otto {

void optimizer_step(std::vector<double>& params, std::vector<double>& grads, OptimizerState& state,
                    double lr) {
  const size_t n = params.size();
  if (grads.size() != n || state.m.size() != n)
    throw std::invalid_argument("optimizer_step: size mismatch");

  double sq = 0.0;
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::runtime_error("optimizer_step: non-finite gradient");
    sq += g * g;
  }
  if (state.grad_clip > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > state.grad_clip) {
      const double scale = state.grad_clip / norm;
      for (double& g : grads) g *= scale;
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (size_t i = 0; i < n; ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * params[i]);
  }
}

}  // namespace otto
