#include "otto/generate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace otto {

Strategy strategy_from_string(const std::string& name) {
  if (name == "random") return Strategy::random;
  if (name == "top_n") return Strategy::top_n;
  if (name == "softmax") return Strategy::softmax;
  throw std::invalid_argument("unknown strategy: " + name);
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::top_n: return "top_n";
    case Strategy::softmax: return "softmax";
  }
  return "?";
}

std::vector<double> perturb_action(const std::vector<double>& action, double epsilon,
                                   std::span<const double> low, std::span<const double> high,
                                   Rng& rng) {
  if (epsilon < 0.0) throw std::invalid_argument("perturb_action: epsilon must be >= 0");
  if (action.size() != low.size() || action.size() != high.size())
    throw std::invalid_argument("perturb_action: bounds dim mismatch");
  std::vector<double> out(action.size());
  for (size_t i = 0; i < action.size(); ++i) {
    double noisy = action[i] + rng.uniform(-epsilon, epsilon);
    out[i] = std::min(std::max(noisy, low[i]), high[i]);
  }
  return out;
}

namespace {

// Terminal anywhere but the last contained step makes a window unusable.
bool crosses_terminal(const Trajectory& tr, size_t offset, int h) {
  for (int j = 0; j + 1 < h; ++j)
    if (tr.steps[offset + j].terminal) return true;
  return false;
}

Segment materialize(const OfflineDataset& d, size_t traj, int64_t t_s, int h) {
  const Trajectory& tr = d.trajectories[traj];
  Segment seg;
  seg.traj_index = traj;
  seg.t_s = tr.steps[size_t(t_s)].t;
  seg.steps.assign(tr.steps.begin() + t_s, tr.steps.begin() + t_s + h);
  for (const auto& s : seg.steps) seg.cum_reward += s.reward;
  return seg;
}

}  // namespace

std::vector<Segment> split_segments(const OfflineDataset& d, int h) {
  if (h < 2) throw std::invalid_argument("split_segments: h must be >= 2");
  std::vector<Segment> out;
  for (size_t ti = 0; ti < d.trajectories.size(); ++ti) {
    const Trajectory& tr = d.trajectories[ti];
    for (size_t off = 0; off + size_t(h) <= tr.steps.size(); off += size_t(h)) {
      if (crosses_terminal(tr, off, h)) continue;
      out.push_back(materialize(d, ti, int64_t(off), h));
    }
  }
  return out;
}

std::vector<Segment> select_segments(const OfflineDataset& d, std::span<const Segment> segments,
                                     const GenerationConfig& cfg, int n, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("select_segments: N must be > 0");
  std::vector<Segment> out;
  out.reserve(n);

  switch (cfg.strategy) {
    case Strategy::top_n: {
      if (size_t(n) > segments.size())
        throw std::invalid_argument("select_segments: N exceeds segment count");
      std::vector<size_t> order(segments.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (segments[a].cum_reward != segments[b].cum_reward)
          return segments[a].cum_reward > segments[b].cum_reward;
        if (segments[a].traj_index != segments[b].traj_index)
          return segments[a].traj_index < segments[b].traj_index;
        return segments[a].t_s < segments[b].t_s;
      });
      for (int i = 0; i < n; ++i) out.push_back(segments[order[i]]);
      return out;
    }
    case Strategy::softmax: {
      if (size_t(n) > segments.size())
        throw std::invalid_argument("select_segments: N exceeds segment count");
      if (cfg.selection_temperature <= 0.0)
        throw std::invalid_argument("select_segments: temperature must be > 0");
      double mx = segments[0].cum_reward;
      for (const auto& s : segments) mx = std::max(mx, s.cum_reward);
      std::vector<double> weight(segments.size());
      for (size_t i = 0; i < segments.size(); ++i)
        weight[i] = std::exp((segments[i].cum_reward - mx) / cfg.selection_temperature);
      std::vector<uint8_t> taken(segments.size(), 0);
      for (int draw = 0; draw < n; ++draw) {
        double total = 0.0;
        for (size_t i = 0; i < weight.size(); ++i)
          if (!taken[i]) total += weight[i];
        double u = rng.uniform() * total;
        size_t pick = segments.size();
        double acc = 0.0;
        for (size_t i = 0; i < weight.size(); ++i) {
          if (taken[i]) continue;
          acc += weight[i];
          pick = i;
          if (u < acc) break;
        }
        taken[pick] = 1;
        out.push_back(segments[pick]);
      }
      return out;
    }
    case Strategy::random: {
      size_t pool = 0;
      for (const auto& tr : d.trajectories)
        if (tr.steps.size() >= size_t(cfg.h)) pool += tr.steps.size() - size_t(cfg.h) + 1;
      if (size_t(n) > pool)
        throw std::invalid_argument("select_segments: N exceeds available start points");
      std::set<std::pair<size_t, int64_t>> used;
      while (int(out.size()) < n) {
        size_t traj = size_t(rng.uniform_int(d.trajectories.size()));
        const Trajectory& tr = d.trajectories[traj];
        if (tr.steps.size() < size_t(cfg.h)) continue;
        int64_t t_s = int64_t(rng.uniform_int(tr.steps.size() - size_t(cfg.h) + 1));
        if (crosses_terminal(tr, size_t(t_s), cfg.h)) continue;
        if (!used.insert({traj, t_s}).second) continue;
        out.push_back(materialize(d, traj, t_s, cfg.h));
      }
      return out;
    }
  }
  throw std::invalid_argument("select_segments: unknown strategy");
}

GeneratedTrajectory rollout_segment(const Segment& seg, const WorldModel& world,
                                    std::span<const Step> history, const GenerationConfig& cfg,
                                    Rng& rng, std::span<const double> action_low,
                                    std::span<const double> action_high) {
  const int h = cfg.h;
  if (int(seg.steps.size()) != h || h < 2)
    throw std::invalid_argument("rollout_segment: segment length must equal h >= 2");
  for (int j = 0; j + 1 < h; ++j)
    if (seg.steps[j].terminal)
      throw std::invalid_argument("rollout_segment: segment crosses a terminal");
  const int L = world.context_len();
  if (int(history.size()) > L - 1)
    history = history.subspan(history.size() - size_t(L - 1));

  std::vector<Step> ctx(history.begin(), history.end());
  ctx.reserve(history.size() + size_t(h));

  GeneratedTrajectory gen;
  gen.t_s = seg.t_s;
  gen.initial_state = seg.steps.front().state;
  gen.steps.reserve(h);

  std::vector<double> state = seg.steps.front().state;
  for (int i = 0; i < h; ++i) {
    Step cur;
    cur.state = state;
    cur.action = perturb_action(seg.steps[i].action, cfg.epsilon, action_low, action_high, rng);
    cur.t = seg.t_s + i;
    ctx.push_back(std::move(cur));

    const size_t first = ctx.size() > size_t(L) ? ctx.size() - size_t(L) : 0;
    TokenWindow w = make_window(
        std::span<const Step>(ctx.data() + first, ctx.size() - first), L, world.stats());
    StatePrediction sp = world.predict_state(w);
    RewardPrediction rp = world.predict_reward(w);

    GeneratedStep out;
    out.action = ctx.back().action;
    out.reward_mean = rp.mean;
    out.reward_std = rp.stddev;
    out.next_state = sp.mean;
    out.state_std = sp.stddev;
    gen.steps.push_back(std::move(out));
    state = sp.mean;
  }
  return gen;
}

OfflineDataset generate_dataset(const OfflineDataset& original, const WorldModel& world,
                                const EnvSpec& env, const GenerationConfig& cfg,
                                const EvaluatorConfig& eval_cfg) {
  if (cfg.delta <= 0.0) throw std::invalid_argument("generate_dataset: delta must be > 0");
  const size_t d_size = original.transition_count();
  const int n = int(std::floor(cfg.delta * double(d_size) / double(cfg.h)));
  if (n <= 0)
    throw std::invalid_argument("generate_dataset: delta * |D| too small for one segment");

  std::vector<Segment> segments;
  if (cfg.strategy != Strategy::random) segments = split_segments(original, cfg.h);
  Rng select_rng = derive_rng(cfg.seed, "select");
  std::vector<Segment> chosen = select_segments(original, segments, cfg, n, select_rng);

  OfflineDataset out;
  out.env_id = original.env_id;
  out.seed = cfg.seed;
  out.d_s = original.d_s;
  out.d_a = original.d_a;
  out.stats = original.stats;  // normalization reference stays the original's
  out.trajectories.reserve(chosen.size());

  const int L = world.context_len();
  for (size_t o = 0; o < chosen.size(); ++o) {
    const Segment& seg = chosen[o];
    const Trajectory& src = original.trajectories[seg.traj_index];
    const int64_t local_ts = seg.t_s - src.start_index();
    const size_t hist_first = size_t(std::max<int64_t>(0, local_ts - (L - 1)));
    std::span<const Step> history(src.steps.data() + hist_first, size_t(local_ts) - hist_first);

    Rng roll_rng = derive_rng(cfg.seed, "rollout", o);
    GeneratedTrajectory gen =
        rollout_segment(seg, world, history, cfg, roll_rng, env.action_low, env.action_high);

    std::vector<double> r_mean(cfg.h), r_std(cfg.h), s_std(cfg.h);
    for (int i = 0; i < cfg.h; ++i) {
      r_mean[i] = gen.steps[i].reward_mean;
      r_std[i] = gen.steps[i].reward_std;
      s_std[i] = state_uncertainty(gen.steps[i].state_std);
    }
    std::vector<double> corrected =
        eval_cfg.pass_through ? r_mean : correct_rewards(r_mean, r_std, s_std, eval_cfg.omega);

    Trajectory tr;
    tr.source = TrajectorySource::generated;
    tr.steps.resize(cfg.h);
    for (int i = 0; i < cfg.h; ++i) {
      Step& s = tr.steps[i];
      s.state = i == 0 ? gen.initial_state : gen.steps[i - 1].next_state;
      s.action = gen.steps[i].action;
      s.reward = corrected[i];
      s.terminal = false;  // downstream learners treat the tail as truncation
      s.t = gen.t_s + i;
    }
    out.trajectories.push_back(std::move(tr));
  }
  return out;
}

std::vector<double> rollout_state_errors(const WorldModel& world, const OfflineDataset& heldout,
                                         int h) {
  GenerationConfig cfg;
  cfg.h = h;
  cfg.epsilon = 0.0;
  std::vector<double> action_low(heldout.d_a, -1e300), action_high(heldout.d_a, 1e300);
  std::vector<double> errors;
  for (const auto& tr : heldout.trajectories) {
    if (tr.steps.size() < size_t(h) || h < 2) continue;
    Segment seg;
    seg.traj_index = 0;
    seg.t_s = tr.steps.front().t;
    seg.steps.assign(tr.steps.begin(), tr.steps.begin() + h);
    Rng rng(0);  // epsilon = 0, draws are consumed but add exactly zero
    GeneratedTrajectory gen = rollout_segment(seg, world, {}, cfg, rng, action_low, action_high);
    double err = 0.0;
    int compared = 0;
    for (int i = 0; i + 1 < h && size_t(i + 1) < tr.steps.size(); ++i) {
      double sq = 0.0;
      for (int c = 0; c < heldout.d_s; ++c) {
        double dlt = gen.steps[i].next_state[c] - tr.steps[i + 1].state[c];
        sq += dlt * dlt;
      }
      err += std::sqrt(sq);
      ++compared;
    }
    if (compared > 0) errors.push_back(err / compared);
  }
  return errors;
}

}  // namespace otto
