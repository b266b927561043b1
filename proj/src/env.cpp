#include "otto/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace otto {
namespace {

constexpr double kXLimit = 2.0;
constexpr double kVLimit = 1.0;
constexpr double kGoal = 1.0;
constexpr double kGoalBand = 0.1;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

void check_dims(const EnvSpec& env, const std::vector<double>& state,
                const std::vector<double>& action) {
  if (int(state.size()) != env.d_s)
    throw std::invalid_argument("step_env: state dim " + std::to_string(state.size()) +
                                " != " + std::to_string(env.d_s));
  if (int(action.size()) != env.d_a)
    throw std::invalid_argument("step_env: action dim " + std::to_string(action.size()) +
                                " != " + std::to_string(env.d_a));
}

}  // namespace

EnvSpec env_from_id(const std::string& env_id) {
  EnvSpec env;
  env.env_id = env_id;
  env.d_s = 2;
  env.d_a = 1;
  env.horizon = 50;
  env.action_low = {-1.0};
  env.action_high = {1.0};
  env.init_low = {-0.1, 0.0};
  env.init_high = {0.1, 0.0};
  if (env_id == "LineReach") {
    // Measured once by measure_reference_returns(env, 1000, seed=20240601).
    env.j_random = -59.482825960338999;
    env.j_expert = -11.482373471113457;
  } else if (env_id == "SparseReach") {
    env.j_random = 1.417;
    env.j_expert = 18.556999999999999;
  } else {
    throw std::invalid_argument("unknown env_id: " + env_id);
  }
  return env;
}

EnvStep step_env(const EnvSpec& env, const std::vector<double>& state,
                 const std::vector<double>& action) {
  check_dims(env, state, action);
  double x = state[0], v = state[1];
  if (x < -kXLimit || x > kXLimit || v < -kVLimit || v > kVLimit)
    throw std::invalid_argument("step_env: state outside bounds");
  double a = clamp(action[0], env.action_low[0], env.action_high[0]);

  double v_next = clamp(v + 0.2 * a, -kVLimit, kVLimit);
  double x_next = clamp(x + 0.1 * v_next, -kXLimit, kXLimit);

  double reward;
  if (env.env_id == "SparseReach")
    reward = std::abs(x_next - kGoal) <= kGoalBand ? 1.0 : 0.0;
  else
    reward = -std::abs(x_next - kGoal);

  return {{x_next, v_next}, reward, false};
}

std::vector<double> expert_action(const EnvSpec& env, const std::vector<double>& state) {
  double a = clamp(1.5 * (1.0 - state[0]) - 0.5 * state[1], env.action_low[0], env.action_high[0]);
  return {a};
}

std::vector<double> sample_initial_state(const EnvSpec& env, Rng& rng) {
  std::vector<double> s(env.d_s);
  for (int i = 0; i < env.d_s; ++i) s[i] = rng.uniform(env.init_low[i], env.init_high[i]);
  return s;
}

PolicyId policy_from_string(const std::string& name) {
  if (name == "expert") return PolicyId::expert;
  if (name == "medium") return PolicyId::medium;
  if (name == "medium_expert") return PolicyId::medium_expert;
  if (name == "medium_replay") return PolicyId::medium_replay;
  throw std::invalid_argument("unknown policy_id: " + name);
}

std::string to_string(PolicyId id) {
  switch (id) {
    case PolicyId::expert: return "expert";
    case PolicyId::medium: return "medium";
    case PolicyId::medium_expert: return "medium_expert";
    case PolicyId::medium_replay: return "medium_replay";
  }
  return "?";
}

Trajectory rollout_episode(const EnvSpec& env, const Actor& actor, Rng& rng) {
  Trajectory tr;
  tr.source = TrajectorySource::collected;
  tr.steps.reserve(env.horizon);
  std::vector<double> state = sample_initial_state(env, rng);
  for (int t = 0; t < env.horizon; ++t) {
    std::vector<double> action = actor(state, rng);
    for (int i = 0; i < env.d_a; ++i)
      action[i] = clamp(action[i], env.action_low[i], env.action_high[i]);
    EnvStep out = step_env(env, state, action);
    Step step;
    step.state = state;
    step.action = action;
    step.reward = out.reward;
    step.terminal = (t == env.horizon - 1);
    step.t = t;
    tr.steps.push_back(std::move(step));
    state = out.next_state;
  }
  return tr;
}

namespace {

Actor behavior_actor(const EnvSpec& env, PolicyId policy, size_t traj_index, Rng& traj_rng) {
  switch (policy) {
    case PolicyId::expert:
      return [&env](const std::vector<double>& s, Rng&) { return expert_action(env, s); };
    case PolicyId::medium:
      return [&env](const std::vector<double>& s, Rng& rng) {
        auto a = expert_action(env, s);
        for (auto& ai : a) ai += rng.uniform(-0.5, 0.5);
        return a;
      };
    case PolicyId::medium_expert:
      // Trajectory-level 50/50 mix: even indices expert, odd indices medium.
      if (traj_index % 2 == 0)
        return behavior_actor(env, PolicyId::expert, traj_index, traj_rng);
      return behavior_actor(env, PolicyId::medium, traj_index, traj_rng);
    case PolicyId::medium_replay: {
      double scale = 0.1 * double(traj_rng.uniform_int(9) + 1);  // {0.1, ..., 0.9}
      return [&env, scale](const std::vector<double>& s, Rng& rng) {
        auto a = expert_action(env, s);
        for (auto& ai : a) ai += rng.uniform(-scale, scale);
        return a;
      };
    }
  }
  throw std::invalid_argument("unknown policy_id");
}

}  // namespace

OfflineDataset collect_dataset(const EnvSpec& env, PolicyId policy, int n_traj, uint64_t seed) {
  if (n_traj < 1) throw std::invalid_argument("collect_dataset: n_traj must be >= 1");
  std::vector<Trajectory> trajectories;
  trajectories.reserve(n_traj);
  for (int i = 0; i < n_traj; ++i) {
    // One independent stream per trajectory index.
    Rng rng = derive_rng(seed, "traj", uint64_t(i));
    Actor actor = behavior_actor(env, policy, size_t(i), rng);
    trajectories.push_back(rollout_episode(env, actor, rng));
  }
  return make_dataset(env, std::move(trajectories), seed);
}

OfflineDataset make_dataset(const EnvSpec& env, std::vector<Trajectory> trajectories,
                            uint64_t seed) {
  OfflineDataset d;
  d.env_id = env.env_id;
  d.seed = seed;
  d.d_s = env.d_s;
  d.d_a = env.d_a;
  d.trajectories = std::move(trajectories);
  d.stats = compute_stats(d.trajectories, d.d_s, d.d_a);
  return d;
}

ReferenceReturns measure_reference_returns(const EnvSpec& env, int episodes, uint64_t seed) {
  auto mean_return = [&](const Actor& actor, std::string_view tag) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
      Rng rng = derive_rng(seed, tag, uint64_t(e));
      Trajectory tr = rollout_episode(env, actor, rng);
      for (const auto& s : tr.steps) total += s.reward;
    }
    return total / double(episodes);
  };
  Actor random = [&env](const std::vector<double>&, Rng& rng) {
    std::vector<double> a(env.d_a);
    for (int i = 0; i < env.d_a; ++i) a[i] = rng.uniform(env.action_low[i], env.action_high[i]);
    return a;
  };
  Actor expert = [&env](const std::vector<double>& s, Rng&) { return expert_action(env, s); };
  return {mean_return(random, "ref_random"), mean_return(expert, "ref_expert")};
}

}  // namespace otto
