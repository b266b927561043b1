#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "otto/data.hpp"
#include "otto/seqcore/model.hpp"

namespace otto {

// Warmup followed by cosine-annealed cycles; the learning rate resets to
// alpha0 at each cycle boundary.
struct LRSchedule {
  double alpha0 = 1e-4;
  int64_t warmup_steps = 100000;
  int64_t cycle_steps = 500000;
  int n_cycles = 4;

  int64_t total_steps() const { return warmup_steps + int64_t(n_cycles) * cycle_steps; }
  bool operator==(const LRSchedule&) const = default;

  static LRSchedule desk() { return {1e-3, 2000, 8000, 4}; }
  static LRSchedule pipeline() { return {1e-3, 500, 1500, 4}; }
};

double lr_at(int64_t t, const LRSchedule& sched);

struct StatePrediction {
  std::vector<double> mean;    // absolute next state, env units
  std::vector<double> stddev;  // per-dimension population std over snapshots
};

struct RewardPrediction {
  double mean = 0.0;
  double stddev = 0.0;
};

// Query interface for anything that can stand in for the environment during
// rollouts (the trained ensemble, or a test stub wrapping true dynamics).
class WorldModel {
 public:
  virtual ~WorldModel() = default;
  virtual StatePrediction predict_state(const TokenWindow& w) const = 0;
  virtual RewardPrediction predict_reward(const TokenWindow& w) const = 0;
  virtual int context_len() const = 0;
  virtual const Stats& stats() const = 0;
};

// K state and Q reward snapshots harvested at cycle ends of one training run.
class EnsembleBundle final : public WorldModel {
 public:
  EnsembleBundle() = default;
  EnsembleBundle(std::vector<SequenceModel> state_models, std::vector<SequenceModel> reward_models,
                 Stats stats);

  StatePrediction predict_state(const TokenWindow& w) const override;
  RewardPrediction predict_reward(const TokenWindow& w) const override;
  int context_len() const override;
  const Stats& stats() const override { return stats_; }

  const std::vector<SequenceModel>& state_models() const { return state_models_; }
  const std::vector<SequenceModel>& reward_models() const { return reward_models_; }

  // Ensemble with a single member, for the one-model ablation and diagnostics.
  EnsembleBundle single(size_t state_index, size_t reward_index) const;

 private:
  std::vector<SequenceModel> state_models_;
  std::vector<SequenceModel> reward_models_;
  Stats stats_;
};

using TrainProgress = std::function<void(const char* head, int64_t step, double loss)>;

// Two independent training runs (state head, reward head) over the cyclic
// schedule; one snapshot per cycle end. requires sched.n_cycles >= 1.
EnsembleBundle train_world_ensemble(const OfflineDataset& dataset, ModelConfig model_cfg,
                                    const LRSchedule& sched, int batch_size, uint64_t seed,
                                    const TrainProgress& progress = nullptr);

void save_bundle(const EnsembleBundle& bundle, const std::filesystem::path& dir);
EnsembleBundle load_bundle(const std::filesystem::path& dir);

// Held-out one-step prediction error in normalized units (delta space for
// states, standardized space for rewards), averaged over every valid window.
struct OneStepError {
  double state_mse = 0.0;
  double reward_mse = 0.0;
};
OneStepError evaluate_one_step(const EnsembleBundle& bundle, const OfflineDataset& heldout);

// Desk-scale model preset; paper-scale values are the ModelConfig defaults.
ModelConfig desk_model_config(int d_s, int d_a, int max_step);

}  // namespace otto
