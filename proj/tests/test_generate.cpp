#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "otto/generate.hpp"

using namespace otto;

namespace {

// World model stub that answers queries with the true environment dynamics.
class EnvOracle : public WorldModel {
 public:
  EnvOracle(EnvSpec env, Stats stats, int L) : env_(std::move(env)), stats_(std::move(stats)), L_(L) {}

  StatePrediction predict_state(const TokenWindow& w) const override {
    auto [state, action] = last_pair(w);
    EnvStep out = step_env(env_, state, action);
    return {out.next_state, std::vector<double>(state.size(), 0.0)};
  }
  RewardPrediction predict_reward(const TokenWindow& w) const override {
    auto [state, action] = last_pair(w);
    return {step_env(env_, state, action).reward, 0.0};
  }
  int context_len() const override { return L_; }
  const Stats& stats() const override { return stats_; }

 private:
  std::pair<std::vector<double>, std::vector<double>> last_pair(const TokenWindow& w) const {
    const int d_a = int(stats_.action_mean.size());
    std::vector<double> action(d_a);
    const size_t last = size_t(w.n_steps - 1);
    for (int i = 0; i < d_a; ++i)
      action[i] = w.actions[last * d_a + i] * stats_.action_std[i] + stats_.action_mean[i];
    return {w.raw_last_state, action};
  }

  EnvSpec env_;
  Stats stats_;
  int L_;
};

Segment segment_of(const OfflineDataset& d, size_t traj, int64_t t_s, int h) {
  Segment seg;
  seg.traj_index = traj;
  seg.t_s = t_s;
  seg.steps.assign(d.trajectories[traj].steps.begin() + t_s,
                   d.trajectories[traj].steps.begin() + t_s + h);
  for (const auto& s : seg.steps) seg.cum_reward += s.reward;
  return seg;
}

}  // namespace

TEST_CASE("perturb_action") {
  std::vector<double> low{-1.0}, high{1.0};
  Rng rng(42);

  SUBCASE("zero noise is the identity") {
    auto out = perturb_action({0.3}, 0.0, low, high, rng);
    CHECK(out[0] == 0.3);
  }
  SUBCASE("noise stays within the half-range before clamping") {
    Rng r2(7);
    for (int i = 0; i < 5000; ++i) {
      auto out = perturb_action({0.0}, 0.02, low, high, r2);
      CHECK(std::abs(out[0]) <= 0.02);
    }
  }
  SUBCASE("bounds are enforced after noise") {
    Rng r2(8);
    for (int i = 0; i < 2000; ++i) {
      auto out = perturb_action({0.95}, 0.1, low, high, r2);
      CHECK(out[0] <= 1.0);
      CHECK(out[0] >= 0.85 - 1e-12);
    }
  }
  SUBCASE("fixed seed replays bit-identically") {
    Rng a(42), b(42);
    auto pa = perturb_action({0.0, 0.0}, 0.1, std::vector<double>{-1.0, -1.0},
                             std::vector<double>{1.0, 1.0}, a);
    auto pb = perturb_action({0.0, 0.0}, 0.1, std::vector<double>{-1.0, -1.0},
                             std::vector<double>{1.0, 1.0}, b);
    CHECK(pa == pb);
  }
  SUBCASE("negative epsilon is rejected") {
    CHECK_THROWS_AS(perturb_action({0.0}, -0.1, low, high, rng), std::invalid_argument);
  }
}

TEST_CASE("split_segments") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 3, 11);

  SUBCASE("50-step trajectories split into 5 segments of 10") {
    auto segs = split_segments(d, 10);
    CHECK(segs.size() == 15);  // 3 trajectories x 5
    for (const auto& s : segs) CHECK(s.steps.size() == 10);
  }
  SUBCASE("trailing remainder is dropped") {
    OfflineDataset odd = d;
    odd.trajectories.resize(1);
    odd.trajectories[0].steps.resize(50);
    // grow to 55 steps by appending a shifted copy
    for (int i = 0; i < 5; ++i) {
      Step s = odd.trajectories[0].steps[i];
      s.t = 50 + i;
      s.terminal = false;
      odd.trajectories[0].steps.push_back(s);
    }
    odd.trajectories[0].steps[49].terminal = false;
    odd.trajectories[0].steps[54].terminal = true;
    auto segs = split_segments(odd, 10);
    CHECK(segs.size() == 5);
  }
  SUBCASE("cumulative reward sums the contained steps") {
    OfflineDataset flat = d;
    flat.trajectories.resize(1);
    for (auto& s : flat.trajectories[0].steps) s.reward = 0.1;
    auto segs = split_segments(flat, 10);
    for (const auto& s : segs) CHECK(s.cum_reward == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("windows crossing a terminal are discarded") {
    OfflineDataset cut = d;
    cut.trajectories.resize(1);
    cut.trajectories[0].steps[14].terminal = true;  // inside the second window
    auto segs = split_segments(cut, 10);
    CHECK(segs.size() == 4);
    for (const auto& s : segs) CHECK(s.t_s != 10);
  }
  SUBCASE("h below 2 is rejected") {
    CHECK_THROWS_AS(split_segments(d, 1), std::invalid_argument);
  }
}

TEST_CASE("select_segments top_n") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 1, 3);
  std::vector<Segment> segs;
  for (double r : {5.0, 3.0, 9.0, 1.0}) {
    Segment s = segment_of(d, 0, 0, 10);
    s.cum_reward = r;
    s.t_s = int64_t(segs.size());
    segs.push_back(s);
  }
  GenerationConfig cfg;
  cfg.strategy = Strategy::top_n;
  cfg.h = 10;
  Rng rng(1);
  auto out = select_segments(d, segs, cfg, 2, rng);
  CHECK(out.size() == 2);
  CHECK(out[0].cum_reward == 9.0);
  CHECK(out[1].cum_reward == 5.0);

  CHECK_THROWS_AS(select_segments(d, segs, cfg, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(select_segments(d, segs, cfg, 5, rng), std::invalid_argument);
}

TEST_CASE("top_n agrees with a brute-force selection oracle") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 1, 3);
  Rng gen(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 20 + int(gen.uniform_int(200));
    std::vector<Segment> segs;
    for (int i = 0; i < m; ++i) {
      Segment s = segment_of(d, 0, 0, 10);
      s.traj_index = size_t(gen.uniform_int(7));
      s.t_s = int64_t(gen.uniform_int(40));
      s.cum_reward = std::floor(gen.uniform(-5.0, 5.0) * 4.0) / 4.0;  // force ties
      segs.push_back(s);
    }
    const int n = 1 + int(gen.uniform_int(m));
    GenerationConfig cfg;
    cfg.strategy = Strategy::top_n;
    cfg.h = 10;
    Rng rng(trial);
    auto got = select_segments(d, segs, cfg, n, rng);

    // oracle: repeated max extraction with the tie rule
    std::vector<Segment> pool = segs;
    std::vector<Segment> expect;
    for (int k = 0; k < n; ++k) {
      size_t best = 0;
      for (size_t i = 1; i < pool.size(); ++i) {
        const auto &a = pool[i], &b = pool[best];
        bool better = a.cum_reward > b.cum_reward ||
                      (a.cum_reward == b.cum_reward &&
                       (a.traj_index < b.traj_index ||
                        (a.traj_index == b.traj_index && a.t_s < b.t_s)));
        if (better) best = i;
      }
      expect.push_back(pool[best]);
      pool.erase(pool.begin() + best);
    }
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].cum_reward == expect[i].cum_reward);
      CHECK(got[i].traj_index == expect[i].traj_index);
      CHECK(got[i].t_s == expect[i].t_s);
    }
  }
}

TEST_CASE("softmax selection first-draw behavior") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 1, 3);

  SUBCASE("equal rewards draw uniformly") {
    std::vector<Segment> segs;
    for (int i = 0; i < 3; ++i) {
      Segment s = segment_of(d, 0, 0, 10);
      s.cum_reward = 0.0;
      s.t_s = i;
      segs.push_back(s);
    }
    GenerationConfig cfg;
    cfg.strategy = Strategy::softmax;
    cfg.h = 10;
    const int trials = 30000;
    int counts[3] = {};
    for (int i = 0; i < trials; ++i) {
      Rng rng(1000 + i);
      auto out = select_segments(d, segs, cfg, 1, rng);
      counts[out[0].t_s]++;
    }
    const double sigma = std::sqrt((1.0 / 3) * (2.0 / 3) / trials);
    for (int c : counts) CHECK(std::abs(double(c) / trials - 1.0 / 3) < 4.0 * sigma);
  }

  SUBCASE("rewards [1, 0] at temperature 1 draw the first with P = e/(e+1)") {
    std::vector<Segment> segs;
    Segment s0 = segment_of(d, 0, 0, 10);
    s0.cum_reward = 1.0;
    s0.t_s = 0;
    Segment s1 = segment_of(d, 0, 0, 10);
    s1.cum_reward = 0.0;
    s1.t_s = 1;
    segs = {s0, s1};
    GenerationConfig cfg;
    cfg.strategy = Strategy::softmax;
    cfg.h = 10;
    cfg.selection_temperature = 1.0;
    const double p_exact = std::exp(1.0) / (std::exp(1.0) + 1.0);  // 0.731058...
    const int trials = 30000;
    int first = 0;
    for (int i = 0; i < trials; ++i) {
      Rng rng(5000 + i);
      auto out = select_segments(d, segs, cfg, 1, rng);
      if (out[0].t_s == 0) ++first;
    }
    const double sigma = std::sqrt(p_exact * (1.0 - p_exact) / trials);
    CHECK(std::abs(double(first) / trials - p_exact) < 4.0 * sigma);
  }
}

TEST_CASE("selection is without replacement for every strategy") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 5, 17);
  auto segs = split_segments(d, 10);
  for (Strategy strat : {Strategy::top_n, Strategy::softmax, Strategy::random}) {
    GenerationConfig cfg;
    cfg.strategy = strat;
    cfg.h = 10;
    Rng rng(3);
    auto out = select_segments(d, segs, cfg, 12, rng);
    std::set<std::pair<size_t, int64_t>> seen;
    for (const auto& s : out) CHECK(seen.insert({s.traj_index, s.t_s}).second);
  }
}

TEST_CASE("random strategy draws arbitrary starts within range") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 4, 19);
  GenerationConfig cfg;
  cfg.strategy = Strategy::random;
  cfg.h = 10;
  Rng rng(77);
  auto out = select_segments(d, {}, cfg, 30, rng);
  bool off_grid = false;
  for (const auto& s : out) {
    CHECK(s.t_s >= 0);
    CHECK(s.t_s <= 40);
    CHECK(s.steps.size() == 10);
    off_grid |= (s.t_s % 10) != 0;
  }
  CHECK(off_grid);  // overlap with the split grid is allowed
}

TEST_CASE("rollout through the environment oracle reproduces true states") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 3, 23);
  EnvOracle oracle(env, d.stats, 5);

  Segment seg = segment_of(d, 1, 20, 10);
  GenerationConfig cfg;
  cfg.h = 10;
  cfg.epsilon = 0.0;
  Rng rng(1);
  std::span<const Step> history(d.trajectories[1].steps.data() + 16, 4);
  GeneratedTrajectory gen =
      rollout_segment(seg, oracle, history, cfg, rng, env.action_low, env.action_high);

  REQUIRE(gen.steps.size() == 10);
  CHECK(gen.t_s == 20);
  // with zero noise the oracle replays the logged transitions
  for (int i = 0; i < 9; ++i) {
    for (int c = 0; c < env.d_s; ++c)
      CHECK(gen.steps[i].next_state[c] ==
            doctest::Approx(d.trajectories[1].steps[21 + i].state[c]).epsilon(1e-12));
    CHECK(gen.steps[i].reward_mean ==
          doctest::Approx(d.trajectories[1].steps[20 + i].reward).epsilon(1e-12));
    CHECK(gen.steps[i].state_std.size() == size_t(env.d_s));
  }

  SUBCASE("fixed seed replays the rollout bit-identically") {
    Rng r2(1);
    GeneratedTrajectory again =
        rollout_segment(seg, oracle, history, cfg, r2, env.action_low, env.action_high);
    for (int i = 0; i < 10; ++i) {
      CHECK(again.steps[i].action == gen.steps[i].action);
      CHECK(again.steps[i].next_state == gen.steps[i].next_state);
      CHECK(again.steps[i].reward_mean == gen.steps[i].reward_mean);
    }
  }

  SUBCASE("segments violating their invariants are rejected") {
    Segment bad = seg;
    bad.steps[3].terminal = true;
    CHECK_THROWS_AS(
        rollout_segment(bad, oracle, history, cfg, rng, env.action_low, env.action_high),
        std::invalid_argument);
    Segment short_seg = seg;
    short_seg.steps.resize(5);
    CHECK_THROWS_AS(
        rollout_segment(short_seg, oracle, history, cfg, rng, env.action_low, env.action_high),
        std::invalid_argument);
  }
}

TEST_CASE("generate_dataset honors the delta budget and bounds") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 200, 31);  // 10000 transitions
  EnvOracle oracle(env, d.stats, 5);
  GenerationConfig cfg;
  cfg.strategy = Strategy::softmax;
  cfg.h = 10;
  cfg.epsilon = 0.1;
  cfg.delta = 0.1;
  cfg.seed = 7;
  EvaluatorConfig eval_cfg;

  OfflineDataset gen = generate_dataset(d, oracle, env, cfg, eval_cfg);
  CHECK(gen.trajectories.size() == 100);  // N = floor(0.1 * 10000 / 10)
  CHECK(gen.transition_count() == 1000);
  CHECK(augmentation_ratio(d, gen) <= cfg.delta + 1e-12);
  for (const auto& tr : gen.trajectories) {
    CHECK(tr.source == TrajectorySource::generated);
    CHECK(tr.steps.size() == 10);
    for (const auto& s : tr.steps) {
      CHECK_FALSE(s.terminal);
      CHECK(s.action[0] >= -1.0);
      CHECK(s.action[0] <= 1.0);
    }
  }
  CHECK(gen.stats == d.stats);

  SUBCASE("same config generates byte-identical data") {
    OfflineDataset gen2 = generate_dataset(d, oracle, env, cfg, eval_cfg);
    CHECK(gen2 == gen);
  }
}

TEST_CASE("rollout error diagnostics stay near zero for the oracle") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 5, 37);
  EnvOracle oracle(env, d.stats, 5);
  auto errs = rollout_state_errors(oracle, d, 50);
  CHECK(errs.size() == 5);
  for (double e : errs) CHECK(e < 1e-12);
}
