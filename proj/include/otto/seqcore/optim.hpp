#pragma once

#include <cstdint>
#include <vector>

namespace otto {

// Adam with decoupled weight decay and global gradient-norm clipping.
struct OptimizerState {
  std::vector<double> m, v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double grad_clip = 0.25;  // <= 0 disables clipping

  OptimizerState(size_t n, double weight_decay = 1e-4, double grad_clip = 0.25)
      : m(n, 0.0), v(n, 0.0), weight_decay(weight_decay), grad_clip(grad_clip) {}
};

// Clips `grads` in place when the global L2 norm exceeds state.grad_clip,
// then applies one Adam update. Throws on non-finite gradients.
void optimizer_step(std::vector<double>& params, std::vector<double>& grads, OptimizerState& state,
                    double lr);

}  // namespace otto
