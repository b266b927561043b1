#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "otto/agent.hpp"
#include "otto/data.hpp"
#include "otto/env.hpp"
#include "otto/evaluator.hpp"
#include "otto/generate.hpp"
#include "otto/worldtrain.hpp"

namespace otto {

enum class Mode { original, single, no_correct, otto_full };
Mode mode_from_string(const std::string& name);
std::string to_string(Mode m);  // "original", "single", "no_correct", "otto"

struct DatasetSpec {
  std::string policy_id = "medium";
  int n_traj = 100;
  uint64_t seed = 0;
  bool operator==(const DatasetSpec&) const = default;
};

struct WorldSpec {
  ModelConfig model;
  LRSchedule schedule;
  int batch_size = 64;
  uint64_t seed = 0;
  bool operator==(const WorldSpec&) const = default;
};

struct ExperimentConfig {
  int version = 1;
  std::string run_id = "experiment";
  std::string env_id = "LineReach";
  DatasetSpec dataset;
  WorldSpec world;
  GenerationConfig generation;
  EvaluatorConfig evaluator;
  AgentConfig agent;
  Mode mode = Mode::otto_full;
  int eval_episodes = 10;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};

  bool operator==(const ExperimentConfig&) const = default;
};

// Desk-runtime defaults for the full pipeline on the given environment.
ExperimentConfig default_experiment_config(const std::string& env_id);

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);

// Applies the mode's forcings: single => one cycle (K = Q = 1) and correction
// off; no_correct => correction off; original => generation skipped.
ExperimentConfig effective_config(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

// ---- pipeline stages (shared by run_experiment and the CLI subcommands) ----
// Stage seeds derive from (configured stage seed, run seed) so that a seed's
// pipeline is reproducible and mode-independent where stages coincide.
uint64_t stage_seed(uint64_t cfg_seed, uint64_t run_seed, const char* tag);

OfflineDataset collect_stage(const ExperimentConfig& cfg, uint64_t run_seed);
EnsembleBundle world_stage(const ExperimentConfig& cfg, const OfflineDataset& dataset,
                           uint64_t run_seed, const TrainProgress& progress = nullptr);
OfflineDataset generate_stage(const ExperimentConfig& cfg, const OfflineDataset& dataset,
                              const WorldModel& world, uint64_t run_seed);
Policy policy_stage(const ExperimentConfig& cfg, const OfflineDataset& mixed, uint64_t run_seed);
double evaluate_stage(const ExperimentConfig& cfg, const Policy& policy, uint64_t run_seed);

struct SeedResult {
  uint64_t seed = 0;
  double mean_return = 0.0;
  double normalized_score = 0.0;
  size_t generated_transitions = 0;
  double wall_seconds = 0.0;
};

struct Report {
  ExperimentConfig config;  // effective
  std::vector<SeedResult> seeds;
  double mean_score = 0.0;
  double std_score = 0.0;  // population std over seeds
};

// Full pipeline per seed; artifacts and metrics.csv written under out_dir.
Report run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      bool verbose = false);

struct ModeRow {
  Mode mode;
  double mean_score = 0.0;
  double std_score = 0.0;
  double delta_vs_original = 0.0;
};

struct Comparison {
  std::vector<ModeRow> rows;  // fixed order: original, single, no_correct, otto
};

// Runs each config (same env/dataset required) and tabulates the scores.
Comparison compare_modes(const std::vector<ExperimentConfig>& cfgs,
                         const std::filesystem::path& out_dir, bool verbose = false);

std::string metrics_csv_header();
std::string metrics_csv_row(const ExperimentConfig& cfg, const SeedResult& r);

}  // namespace otto
