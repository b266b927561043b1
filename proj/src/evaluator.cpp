#include "otto/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace otto {

double state_uncertainty(std::span<const double> per_dim_std) {
  if (per_dim_std.empty()) throw std::invalid_argument("state_uncertainty: empty vector");
  double acc = 0.0;
  for (double s : per_dim_std) {
    if (s < 0.0) throw std::invalid_argument("state_uncertainty: negative std");
    acc += s;
  }
  return acc / double(per_dim_std.size());
}

std::vector<double> correct_rewards(std::span<const double> reward_mean,
                                    std::span<const double> reward_std,
                                    std::span<const double> state_std, double omega) {
  const size_t h = reward_mean.size();
  if (h < 2)
    throw std::invalid_argument("correct_rewards: needs h >= 2 (the correction factor "
                                "degenerates to zero at h = 1)");
  if (reward_std.size() != h || state_std.size() != h)
    throw std::invalid_argument("correct_rewards: length mismatch");
  if (omega <= 0.0) throw std::invalid_argument("correct_rewards: omega must be > 0");
  for (size_t t = 0; t < h; ++t)
    if (reward_std[t] < 0.0 || state_std[t] < 0.0)
      throw std::invalid_argument("correct_rewards: negative uncertainty");

  double mx = state_std[0];
  for (size_t t = 1; t < h; ++t) mx = std::max(mx, state_std[t]);
  std::vector<double> w(h);
  double sum = 0.0;
  for (size_t t = 0; t < h; ++t) {
    w[t] = std::exp((state_std[t] - mx) / omega);
    sum += w[t];
  }
  std::vector<double> out(h);
  for (size_t t = 0; t < h; ++t) out[t] = (1.0 - w[t] / sum) * (reward_mean[t] - reward_std[t]);
  return out;
}

}  // namespace otto
