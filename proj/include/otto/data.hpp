#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace otto {

struct Step {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  bool terminal = false;
  int64_t t = 0;
};

enum class TrajectorySource { collected, generated };

struct Trajectory {
  std::vector<Step> steps;
  TrajectorySource source = TrajectorySource::collected;

  int64_t start_index() const { return steps.empty() ? 0 : steps.front().t; }
  size_t length() const { return steps.size(); }
};

// Per-dimension normalization statistics over every step of a dataset.
// Stds are floored at kStdFloor so constant dimensions never divide by zero.
struct Stats {
  std::vector<double> state_mean, state_std;
  std::vector<double> action_mean, action_std;
  double reward_mean = 0.0, reward_std = 1.0;

  bool operator==(const Stats&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

struct OfflineDataset {
  std::string env_id;
  uint64_t seed = 0;
  int d_s = 0;
  int d_a = 0;
  std::vector<Trajectory> trajectories;
  Stats stats;

  size_t transition_count() const {
    size_t n = 0;
    for (const auto& tr : trajectories) n += tr.steps.size();
    return n;
  }
  bool operator==(const OfflineDataset&) const;
};

// Population mean/std over all steps, std floored at kStdFloor.
Stats compute_stats(const std::vector<Trajectory>& trajectories, int d_s, int d_a);

class DatasetIoError : public std::runtime_error {
 public:
  enum class Code { corrupt_header, dimension_mismatch, truncated_payload };
  DatasetIoError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// Dataset directory format: meta.json + data.bin (little-endian doubles,
// each step laid out as [state | action | reward | terminal]).
void write_dataset(const OfflineDataset& d, const std::filesystem::path& dir);
OfflineDataset read_dataset(const std::filesystem::path& dir);

// |augmented| / |original| in transitions.
double augmentation_ratio(const OfflineDataset& original, const OfflineDataset& augmented);

// Original trajectories plus generated ones; keeps the original's statistics
// as the normalization reference for downstream learners.
OfflineDataset mix_datasets(const OfflineDataset& original, const OfflineDataset& generated);

}  // namespace otto
