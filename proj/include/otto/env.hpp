#pragma once

#include <functional>
#include <string>
#include <vector>

#include "otto/data.hpp"
#include "otto/rng.hpp"

namespace otto {

struct EnvSpec {
  std::string env_id;
  int d_s = 0;
  int d_a = 0;
  int horizon = 0;
  std::vector<double> action_low, action_high;
  // Initial states drawn uniformly from the box [init_low, init_high].
  std::vector<double> init_low, init_high;
  // Reference returns for normalized scoring, measured once over 1000
  // episodes of the uniform-random and expert policies (see reference_returns).
  double j_random = 0.0;
  double j_expert = 0.0;
};

// Registered toy environments: "LineReach" (dense) and "SparseReach" (sparse),
// both a 1-D double integrator with state (x, v) and a single bounded action.
EnvSpec env_from_id(const std::string& env_id);

struct EnvStep {
  std::vector<double> next_state;
  double reward = 0.0;
  bool terminal = false;  // dynamics never terminate; episode end is the caller's step counter
};

EnvStep step_env(const EnvSpec& env, const std::vector<double>& state,
                 const std::vector<double>& action);

// Proportional-derivative controller toward x = 1, clamped to action bounds.
std::vector<double> expert_action(const EnvSpec& env, const std::vector<double>& state);

std::vector<double> sample_initial_state(const EnvSpec& env, Rng& rng);

enum class PolicyId { expert, medium, medium_expert, medium_replay };
PolicyId policy_from_string(const std::string& name);
std::string to_string(PolicyId id);

// Rolls full episodes of `horizon` steps; the actor sees (state, step rng).
using Actor = std::function<std::vector<double>(const std::vector<double>&, Rng&)>;
Trajectory rollout_episode(const EnvSpec& env, const Actor& actor, Rng& rng);

OfflineDataset collect_dataset(const EnvSpec& env, PolicyId policy, int n_traj, uint64_t seed);

// Builds a dataset (with statistics) from externally produced trajectories.
OfflineDataset make_dataset(const EnvSpec& env, std::vector<Trajectory> trajectories,
                            uint64_t seed);

struct ReferenceReturns {
  double j_random = 0.0;
  double j_expert = 0.0;
};

// The measurement procedure behind EnvSpec::j_random / j_expert.
ReferenceReturns measure_reference_returns(const EnvSpec& env, int episodes, uint64_t seed);

}  // namespace otto
