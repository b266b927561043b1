#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "otto/data.hpp"
#include "otto/env.hpp"
#include "otto/evaluator.hpp"
#include "otto/rng.hpp"
#include "otto/worldtrain.hpp"

namespace otto {

// A length-h slice of a logged trajectory, the seed of one generated rollout.
struct Segment {
  size_t traj_index = 0;
  int64_t t_s = 0;
  std::vector<Step> steps;  // exactly h
  double cum_reward = 0.0;
};

enum class Strategy { random, top_n, softmax };
Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

struct GenerationConfig {
  Strategy strategy = Strategy::softmax;
  int h = 50;
  double epsilon = 0.1;               // uniform action-noise half-range
  double delta = 0.10;                // target |D_aug| / |D|
  double selection_temperature = 1.0;  // softmax strategy temperature
  uint64_t seed = 0;

  bool operator==(const GenerationConfig&) const = default;
};

struct GeneratedStep {
  std::vector<double> action;      // perturbed a*
  double reward_mean = 0.0;        // raw model reward, uncorrected
  double reward_std = 0.0;
  std::vector<double> next_state;  // predicted s_{t+1}
  std::vector<double> state_std;   // per-dimension ensemble std of s_{t+1}
};

struct GeneratedTrajectory {
  int64_t t_s = 0;
  std::vector<double> initial_state;  // the real s_{t_s}
  std::vector<GeneratedStep> steps;   // exactly h
};

// Uniform (-epsilon, epsilon) noise per dimension, clamped to action bounds.
std::vector<double> perturb_action(const std::vector<double>& action, double epsilon,
                                   std::span<const double> low, std::span<const double> high,
                                   Rng& rng);

// Non-overlapping windows at offsets 0, h, 2h, ...; trailing remainders and
// windows crossing a terminal before their last step are discarded.
std::vector<Segment> split_segments(const OfflineDataset& d, int h);

// N segments per the configured strategy. top_n and softmax draw from
// `segments`; random draws fresh (trajectory, t_s) starts from the dataset.
// All selection is without replacement.
std::vector<Segment> select_segments(const OfflineDataset& d, std::span<const Segment> segments,
                                     const GenerationConfig& cfg, int n, Rng& rng);

// Rolls h perturbed-action steps through the world model, feeding predicted
// states back as context. `history` holds up to L-1 real steps before t_s.
GeneratedTrajectory rollout_segment(const Segment& seg, const WorldModel& world,
                                    std::span<const Step> history, const GenerationConfig& cfg,
                                    Rng& rng, std::span<const double> action_low,
                                    std::span<const double> action_high);

// Full augmentation pass: select, roll out, correct, package as a dataset
// with source = generated. N = floor(delta * |D| / h).
OfflineDataset generate_dataset(const OfflineDataset& original, const WorldModel& world,
                                const EnvSpec& env, const GenerationConfig& cfg,
                                const EvaluatorConfig& eval_cfg);

// Mean per-step Euclidean state error of model rollouts replaying the logged
// actions (epsilon = 0) against the logged states, one value per trajectory.
std::vector<double> rollout_state_errors(const WorldModel& world, const OfflineDataset& heldout,
                                         int h);

}  // namespace otto
