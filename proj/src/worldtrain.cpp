#include "otto/worldtrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "otto/rng.hpp"
#include "otto/seqcore/optim.hpp"

namespace otto {

using nlohmann::json;

double lr_at(int64_t t, const LRSchedule& sched) {
  if (t < 0) throw std::invalid_argument("lr_at: t must be >= 0");
  if (t < sched.warmup_steps) return double(t + 1) * sched.alpha0 / double(sched.warmup_steps);
  const double frac =
      double((t - sched.warmup_steps) % sched.cycle_steps) / double(sched.cycle_steps);
  return 0.5 * sched.alpha0 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

ModelConfig desk_model_config(int d_s, int d_a, int max_step) {
  ModelConfig c;
  c.embed_dim = 16;
  c.n_layer = 2;
  c.n_head = 2;
  c.dropout = 0.1;
  c.max_step = max_step;
  c.context_len = 5;
  c.d_s = d_s;
  c.d_a = d_a;
  return c;
}

namespace {

// Flat index over all (trajectory, end-step) pairs a training window may end
// at. State windows need a successor at every position, so ends stop one
// short of the trajectory tail; reward windows may end at the tail.
struct WindowIndex {
  std::vector<size_t> cum;  // cumulative pair counts per trajectory
  size_t total = 0;

  WindowIndex(const OfflineDataset& d, bool needs_successor) {
    cum.reserve(d.trajectories.size());
    for (const auto& tr : d.trajectories) {
      size_t len = tr.steps.size();
      size_t ends = needs_successor ? (len >= 2 ? len - 1 : 0) : len;
      total += ends;
      cum.push_back(total);
    }
  }

  std::pair<size_t, size_t> locate(size_t flat) const {
    size_t traj = size_t(std::upper_bound(cum.begin(), cum.end(), flat) - cum.begin());
    size_t base = traj == 0 ? 0 : cum[traj - 1];
    return {traj, flat - base};
  }
};

WindowExample make_example(const OfflineDataset& d, const ModelConfig& cfg, size_t traj,
                           size_t end) {
  const Trajectory& tr = d.trajectories[traj];
  const int L = cfg.context_len;
  const size_t first = end + 1 >= size_t(L) ? end + 1 - size_t(L) : 0;
  const size_t count = end - first + 1;

  WindowExample ex;
  ex.window = make_window(std::span<const Step>(tr.steps.data() + first, count), L, d.stats);
  const int out = cfg.out_dim();
  ex.targets.assign(size_t(L) * out, 0.0);
  ex.target_mask.assign(L, 0);
  const int pad = L - int(count);
  for (size_t k = 0; k < count; ++k) {
    const size_t i = first + k;
    const int slot = pad + int(k);
    if (cfg.head == HeadKind::state) {
      if (i + 1 >= tr.steps.size()) continue;  // no successor
      for (int c = 0; c < cfg.d_s; ++c)
        ex.targets[size_t(slot) * out + c] =
            (tr.steps[i + 1].state[c] - tr.steps[i].state[c]) / d.stats.state_std[c];
    } else {
      ex.targets[size_t(slot) * out] =
          (tr.steps[i].reward - d.stats.reward_mean) / d.stats.reward_std;
    }
    ex.target_mask[slot] = 1;
  }
  return ex;
}

std::vector<SequenceModel> train_head(const OfflineDataset& d, ModelConfig cfg,
                                      const LRSchedule& sched, int batch_size, uint64_t seed,
                                      const char* tag, const TrainProgress& progress) {
  const bool needs_successor = cfg.head == HeadKind::state;
  WindowIndex index(d, needs_successor);
  if (index.total == 0)
    throw std::invalid_argument(std::string("train_world_ensemble: dataset too short for ") +
                                tag + " windows");

  SequenceModel model(cfg);
  model.init_params(derive_seed(seed, tag, 0));
  Rng sample_rng = derive_rng(seed, tag, 1);
  OptimizerState opt(model.params().size());

  std::vector<SequenceModel> snapshots;
  std::vector<WindowExample> batch;
  std::vector<double> grad;
  const int64_t total = sched.total_steps();
  for (int64_t t = 0; t < total; ++t) {
    batch.clear();
    uint64_t dropout_seed = sample_rng.next_u64();
    for (int b = 0; b < batch_size; ++b) {
      size_t flat = size_t(sample_rng.uniform_int(index.total));
      auto [traj, end] = index.locate(flat);
      batch.push_back(make_example(d, cfg, traj, end));
    }
    double loss;
    try {
      loss = batch_gradient(model, batch, true, dropout_seed, grad);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(tag) + " training failed at step " +
                               std::to_string(t) + ": " + e.what());
    }
    if (!std::isfinite(loss))
      throw std::runtime_error(std::string(tag) + " training diverged at step " +
                               std::to_string(t) + " (non-finite loss)");
    optimizer_step(model.params(), grad, opt, lr_at(t, sched));
    if (progress && (t % 500 == 0 || t + 1 == total)) progress(tag, t, loss);
    if (t >= sched.warmup_steps && (t - sched.warmup_steps + 1) % sched.cycle_steps == 0)
      snapshots.push_back(model);  // deep copy at the cycle's last step
  }
  return snapshots;
}

}  // namespace

EnsembleBundle::EnsembleBundle(std::vector<SequenceModel> state_models,
                               std::vector<SequenceModel> reward_models, Stats stats)
    : state_models_(std::move(state_models)),
      reward_models_(std::move(reward_models)),
      stats_(std::move(stats)) {
  if (state_models_.empty() || reward_models_.empty())
    throw std::invalid_argument("EnsembleBundle: needs at least one snapshot per head");
}

int EnsembleBundle::context_len() const { return state_models_.front().config().context_len; }

StatePrediction EnsembleBundle::predict_state(const TokenWindow& w) const {
  if (state_models_.empty()) throw std::logic_error("predict_state: empty ensemble");
  const int d_s = state_models_.front().config().d_s;
  const size_t K = state_models_.size();
  std::vector<std::vector<double>> preds(K);
  for (size_t k = 0; k < K; ++k) {
    std::vector<double> delta = state_models_[k].predict_last(w);
    preds[k].resize(d_s);
    for (int c = 0; c < d_s; ++c)
      preds[k][c] = w.raw_last_state[c] + delta[c] * stats_.state_std[c];
  }
  StatePrediction out;
  out.mean.assign(d_s, 0.0);
  out.stddev.assign(d_s, 0.0);
  for (const auto& p : preds)
    for (int c = 0; c < d_s; ++c) out.mean[c] += p[c];
  for (int c = 0; c < d_s; ++c) out.mean[c] /= double(K);
  for (const auto& p : preds)
    for (int c = 0; c < d_s; ++c) {
      double dlt = p[c] - out.mean[c];
      out.stddev[c] += dlt * dlt;
    }
  for (int c = 0; c < d_s; ++c) out.stddev[c] = std::sqrt(out.stddev[c] / double(K));
  return out;
}

RewardPrediction EnsembleBundle::predict_reward(const TokenWindow& w) const {
  if (reward_models_.empty()) throw std::logic_error("predict_reward: empty ensemble");
  const size_t Q = reward_models_.size();
  std::vector<double> preds(Q);
  for (size_t q = 0; q < Q; ++q)
    preds[q] = reward_models_[q].predict_last(w)[0] * stats_.reward_std + stats_.reward_mean;
  RewardPrediction out;
  for (double p : preds) out.mean += p;
  out.mean /= double(Q);
  double var = 0.0;
  for (double p : preds) {
    double d = p - out.mean;
    var += d * d;
  }
  out.stddev = std::sqrt(var / double(Q));
  return out;
}

EnsembleBundle EnsembleBundle::single(size_t state_index, size_t reward_index) const {
  return EnsembleBundle({state_models_.at(state_index)}, {reward_models_.at(reward_index)},
                        stats_);
}

EnsembleBundle train_world_ensemble(const OfflineDataset& dataset, ModelConfig model_cfg,
                                    const LRSchedule& sched, int batch_size, uint64_t seed,
                                    const TrainProgress& progress) {
  if (dataset.trajectories.empty())
    throw std::invalid_argument("train_world_ensemble: empty dataset");
  if (sched.n_cycles < 1 || sched.warmup_steps < 1 || sched.cycle_steps < 1 ||
      sched.alpha0 <= 0.0)
    throw std::invalid_argument("train_world_ensemble: invalid schedule");
  if (batch_size < 1) throw std::invalid_argument("train_world_ensemble: invalid batch size");
  model_cfg.d_s = dataset.d_s;
  model_cfg.d_a = dataset.d_a;

  ModelConfig state_cfg = model_cfg;
  state_cfg.head = HeadKind::state;
  ModelConfig reward_cfg = model_cfg;
  reward_cfg.head = HeadKind::reward;

  auto state_models =
      train_head(dataset, state_cfg, sched, batch_size, derive_seed(seed, "state_run"), "state",
                 progress);
  auto reward_models =
      train_head(dataset, reward_cfg, sched, batch_size, derive_seed(seed, "reward_run"),
                 "reward", progress);
  return EnsembleBundle(std::move(state_models), std::move(reward_models), dataset.stats);
}

namespace {

json stats_to_json(const Stats& st) {
  return json{{"state_mean", st.state_mean},   {"state_std", st.state_std},
              {"action_mean", st.action_mean}, {"action_std", st.action_std},
              {"reward_mean", st.reward_mean}, {"reward_std", st.reward_std}};
}

Stats stats_from_json(const json& j) {
  Stats st;
  st.state_mean = j.at("state_mean").get<std::vector<double>>();
  st.state_std = j.at("state_std").get<std::vector<double>>();
  st.action_mean = j.at("action_mean").get<std::vector<double>>();
  st.action_std = j.at("action_std").get<std::vector<double>>();
  st.reward_mean = j.at("reward_mean").get<double>();
  st.reward_std = j.at("reward_std").get<double>();
  return st;
}

json config_to_json(const ModelConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"n_layer", c.n_layer},
              {"n_head", c.n_head},
              {"dropout", c.dropout},
              {"max_step", c.max_step},
              {"context_len", c.context_len},
              {"head", c.head == HeadKind::state ? "state" : "reward"},
              {"d_s", c.d_s},
              {"d_a", c.d_a}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_layer = j.at("n_layer").get<int>();
  c.n_head = j.at("n_head").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_step = j.at("max_step").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.head = j.at("head").get<std::string>() == "reward" ? HeadKind::reward : HeadKind::state;
  c.d_s = j.at("d_s").get<int>();
  c.d_a = j.at("d_a").get<int>();
  return c;
}

void write_weights(const std::filesystem::path& file, const std::vector<double>& w) {
  std::ofstream f(file, std::ios::binary);
  f.write(reinterpret_cast<const char*>(w.data()), std::streamsize(w.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_bundle: cannot write " + file.string());
}

void read_weights(const std::filesystem::path& file, std::vector<double>& w) {
  std::ifstream f(file, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("load_bundle: missing " + file.string());
  if (size_t(f.tellg()) != w.size() * sizeof(double))
    throw std::runtime_error("load_bundle: size mismatch in " + file.string());
  f.seekg(0);
  f.read(reinterpret_cast<char*>(w.data()), std::streamsize(w.size() * sizeof(double)));
  if (!f) throw std::runtime_error("load_bundle: short read on " + file.string());
}

}  // namespace

void save_bundle(const EnsembleBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta{{"format_version", 1},
            {"K", bundle.state_models().size()},
            {"Q", bundle.reward_models().size()},
            {"state_config", config_to_json(bundle.state_models().front().config())},
            {"reward_config", config_to_json(bundle.reward_models().front().config())},
            {"statistics", stats_to_json(bundle.stats())}};
  std::ofstream mf(dir / "bundle.json");
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("save_bundle: cannot write bundle.json");
  for (size_t k = 0; k < bundle.state_models().size(); ++k)
    write_weights(dir / ("state_" + std::to_string(k) + ".bin"),
                  bundle.state_models()[k].params());
  for (size_t q = 0; q < bundle.reward_models().size(); ++q)
    write_weights(dir / ("reward_" + std::to_string(q) + ".bin"),
                  bundle.reward_models()[q].params());
}

EnsembleBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "bundle.json");
  if (!mf) throw std::runtime_error("load_bundle: missing bundle.json in " + dir.string());
  json meta;
  mf >> meta;
  if (meta.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_bundle: unsupported format_version");
  const size_t K = meta.at("K").get<size_t>();
  const size_t Q = meta.at("Q").get<size_t>();
  ModelConfig scfg = config_from_json(meta.at("state_config"));
  ModelConfig rcfg = config_from_json(meta.at("reward_config"));
  std::vector<SequenceModel> state_models, reward_models;
  for (size_t k = 0; k < K; ++k) {
    SequenceModel m(scfg);
    read_weights(dir / ("state_" + std::to_string(k) + ".bin"), m.params());
    state_models.push_back(std::move(m));
  }
  for (size_t q = 0; q < Q; ++q) {
    SequenceModel m(rcfg);
    read_weights(dir / ("reward_" + std::to_string(q) + ".bin"), m.params());
    reward_models.push_back(std::move(m));
  }
  return EnsembleBundle(std::move(state_models), std::move(reward_models),
                        stats_from_json(meta.at("statistics")));
}

OneStepError evaluate_one_step(const EnsembleBundle& bundle, const OfflineDataset& heldout) {
  const Stats& st = bundle.stats();
  const int L = bundle.context_len();
  const int d_s = heldout.d_s;
  OneStepError err;
  size_t n_state = 0, n_reward = 0;
  for (const auto& tr : heldout.trajectories) {
    for (size_t end = 0; end < tr.steps.size(); ++end) {
      const size_t first = end + 1 >= size_t(L) ? end + 1 - size_t(L) : 0;
      TokenWindow w = make_window(std::span<const Step>(tr.steps.data() + first, end - first + 1),
                                  L, st);
      RewardPrediction rp = bundle.predict_reward(w);
      double rres = (rp.mean - tr.steps[end].reward) / st.reward_std;
      err.reward_mse += rres * rres;
      ++n_reward;
      if (end + 1 < tr.steps.size()) {
        StatePrediction sp = bundle.predict_state(w);
        for (int c = 0; c < d_s; ++c) {
          double sres = (sp.mean[c] - tr.steps[end + 1].state[c]) / st.state_std[c];
          err.state_mse += sres * sres;
        }
        ++n_state;
      }
    }
  }
  if (n_state == 0 || n_reward == 0)
    throw std::invalid_argument("evaluate_one_step: held-out dataset too short");
  err.state_mse /= double(n_state) * d_s;
  err.reward_mse /= double(n_reward);
  return err;
}

}  // namespace otto
