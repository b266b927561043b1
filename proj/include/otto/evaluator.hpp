#pragma once

#include <span>
#include <vector>

namespace otto {

struct EvaluatorConfig {
  double omega = 0.7;        // softmax temperature over state uncertainties
  bool pass_through = false;  // returns raw rewards unchanged (no-correction ablation)

  bool operator==(const EvaluatorConfig&) const = default;
};

// Scalar state uncertainty: arithmetic mean over the per-dimension stds.
double state_uncertainty(std::span<const double> per_dim_std);

// r*_t = (1 - softmax_t(sigma_s / omega)) * (r_hat_t - sigma_r_t), the softmax
// taken over the h steps of one generated trajectory. Requires h >= 2.
std::vector<double> correct_rewards(std::span<const double> reward_mean,
                                    std::span<const double> reward_std,
                                    std::span<const double> state_std, double omega);

}  // namespace otto
