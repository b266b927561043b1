#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "otto/data.hpp"

namespace otto {

enum class HeadKind { state, reward };

struct ModelConfig {
  int embed_dim = 128;
  int n_layer = 10;
  int n_head = 4;
  double dropout = 0.1;
  int max_step = 1024;   // size of the learned step-embedding table
  int context_len = 20;  // L, in (state, action) steps; the token window holds 2L tokens
  HeadKind head = HeadKind::state;
  int d_s = 0;
  int d_a = 0;

  int out_dim() const { return head == HeadKind::state ? d_s : 1; }
  bool operator==(const ModelConfig&) const = default;
};

// Interleaved {s, a, s, a, ...} window of up to L steps, normalized with
// dataset statistics and left-padded with zero tokens plus a validity mask.
struct TokenWindow {
  int n_steps = 0;      // slot count, == model context_len
  int valid_steps = 0;  // trailing slots holding real steps
  std::vector<double> states;    // n_steps x d_s
  std::vector<double> actions;   // n_steps x d_a
  std::vector<int64_t> step_ids;  // n_steps
  std::vector<uint8_t> valid;     // n_steps
  std::vector<double> raw_last_state;  // env units, convenience for delta un-normalization
};

// `steps` are the most recent steps ending at the query position, oldest first.
TokenWindow make_window(std::span<const Step> steps, int context_len, const Stats& stats);

struct LayoutEntry {
  std::string name;
  size_t offset = 0;
  size_t size = 0;
};

std::vector<LayoutEntry> model_layout(const ModelConfig& cfg);
size_t model_param_count(const ModelConfig& cfg);

// Causal GPT-style sequence model over interleaved state/action tokens with a
// learned step-index embedding. Pre-norm blocks, multi-head attention, ReLU
// feed-forward, linear head read at action-token positions.
class SequenceModel {
 public:
  explicit SequenceModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Gaussian(0, 0.02) weights, zero biases, seeded.
  void init_params(uint64_t seed);

  // Eval-mode per-position predictions: n_steps x out_dim, one row per
  // action-token position; rows for invalid (padding) slots are zero.
  std::vector<double> forward(const TokenWindow& w) const;

  // Prediction at the final (most recent) action position only.
  std::vector<double> predict_last(const TokenWindow& w) const;

 private:
  ModelConfig cfg_;
  std::vector<double> params_;
};

// One training example: window, per-position targets and target mask.
struct WindowExample {
  TokenWindow window;
  std::vector<double> targets;      // n_steps x out_dim
  std::vector<uint8_t> target_mask;  // n_steps; subset of window.valid
};

// Mean of squared componentwise errors over unmasked positions.
double loss_mse(std::span<const double> pred, std::span<const double> target,
                std::span<const uint8_t> mask, int dim);

// Mean batch loss and its exact gradient (written, not accumulated).
// train_mode enables dropout, seeded per example from dropout_seed.
double batch_gradient(const SequenceModel& m, std::span<const WindowExample> batch,
                      bool train_mode, uint64_t dropout_seed, std::vector<double>& grad);

// Checkpoint: model.json (config + layout manifest) + weights.bin (raw doubles).
void save_model(const SequenceModel& m, const std::filesystem::path& dir);
SequenceModel load_model(const std::filesystem::path& dir);

}  // namespace otto
