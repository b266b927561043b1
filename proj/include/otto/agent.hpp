#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "otto/data.hpp"
#include "otto/env.hpp"

namespace otto {

struct AgentConfig {
  double gamma = 0.99;
  double tau = 0.005;        // target-network smoothing rate
  double alpha_bc = 2.5;     // behavior-cloning trade-off
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  double lr = 3e-4;
  int policy_delay = 2;
  int hidden = 256;          // two hidden layers of this width
  int gradient_steps = 30000;
  int batch_size = 256;
  uint64_t seed = 0;

  bool operator==(const AgentConfig&) const = default;

  static AgentConfig desk() {
    AgentConfig c;
    c.hidden = 64;
    c.gradient_steps = 6000;
    c.batch_size = 128;
    c.alpha_bc = 0.4;  // keeps the learner behavior-anchored at desk scale
    return c;
  }
};

// Plain fully connected net, ReLU hidden activations, linear output.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);
  void init(uint64_t seed);

  std::vector<double> forward(const std::vector<double>& x) const;

  // Cache-producing forward plus backward; grads are accumulated.
  struct Cache {
    std::vector<std::vector<double>> acts;  // acts[0] = input, post-ReLU activations after
  };
  std::vector<double> forward(const std::vector<double>& x, Cache& cache) const;
  void backward(const Cache& cache, const std::vector<double>& dy, std::vector<double>& grad,
                std::vector<double>* dx = nullptr) const;

  const std::vector<int>& sizes() const { return sizes_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

 private:
  std::vector<int> sizes_;
  std::vector<double> params_;
};

// Deterministic bounded actor with its twin critics and the normalization
// statistics it was trained with.
struct Policy {
  AgentConfig cfg;
  Mlp actor;             // normalized state -> pre-squash action
  Mlp critic1, critic2;  // [normalized state, action] -> Q
  Stats stats;
  std::vector<double> action_low, action_high;

  std::vector<double> act(const std::vector<double>& state) const;
};

// Behavior-regularized twin-critic TD learner over the mixed dataset.
// Generated steps with no successor in their trajectory are dropped from the
// transition set (non-terminal truncation). The optional checkpoint hook
// fires every checkpoint_every gradient steps with the in-progress policy.
using PolicyCheckpoint = std::function<void(int step, const Policy&)>;
Policy train_policy(const OfflineDataset& dataset, const AgentConfig& cfg,
                    const PolicyCheckpoint& checkpoint = nullptr, int checkpoint_every = 0);

double evaluate_policy(const EnvSpec& env, const Policy& policy, int episodes, uint64_t seed);

// Same evaluation protocol for an arbitrary deterministic actor.
double evaluate_actor(const EnvSpec& env,
                      const std::function<std::vector<double>(const std::vector<double>&)>& actor,
                      int episodes, uint64_t seed);

// 100 * (J - J_random) / (J_expert - J_random)
double normalized_score(double mean_return, const EnvSpec& env);

void save_policy(const Policy& p, const std::filesystem::path& dir);
Policy load_policy(const std::filesystem::path& dir);

}  // namespace otto
