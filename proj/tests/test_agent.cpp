#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "otto/agent.hpp"

using namespace otto;

namespace {

OfflineDataset random_policy_dataset(const EnvSpec& env, int n_traj, uint64_t seed) {
  std::vector<Trajectory> trajs;
  for (int i = 0; i < n_traj; ++i) {
    Rng rng = derive_rng(seed, "rand_traj", uint64_t(i));
    trajs.push_back(rollout_episode(
        env,
        [&](const std::vector<double>&, Rng& r) {
          return std::vector<double>{r.uniform(-1.0, 1.0)};
        },
        rng));
  }
  return make_dataset(env, std::move(trajs), seed);
}

}  // namespace

TEST_CASE("normalized_score is the affine reference map") {
  EnvSpec env = env_from_id("LineReach");
  CHECK(normalized_score(env.j_random, env) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normalized_score(env.j_expert, env) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(normalized_score(0.5 * (env.j_random + env.j_expert), env) ==
        doctest::Approx(50.0).epsilon(1e-12));

  EnvSpec broken = env;
  broken.j_expert = broken.j_random;
  CHECK_THROWS_AS(normalized_score(0.0, broken), std::invalid_argument);
}

TEST_CASE("evaluate_actor") {
  EnvSpec env = env_from_id("LineReach");
  auto expert = [&](const std::vector<double>& s) { return expert_action(env, s); };

  SUBCASE("expert controller lands within 10% of the reference return") {
    double j = evaluate_actor(env, expert, 50, 11);
    CHECK(std::abs(j - env.j_expert) <= 0.1 * std::abs(env.j_expert));
  }
  SUBCASE("one episode returns that episode's reward sum") {
    double j1 = evaluate_actor(env, expert, 1, 5);
    Rng rng = derive_rng(5, "eval", 0);
    Trajectory tr = rollout_episode(
        env, [&](const std::vector<double>& s, Rng&) { return expert(s); }, rng);
    double total = 0.0;
    for (const auto& s : tr.steps) total += s.reward;
    CHECK(j1 == doctest::Approx(total).epsilon(1e-12));
  }
  SUBCASE("fixed seed reproduces the value exactly") {
    CHECK(evaluate_actor(env, expert, 10, 3) == evaluate_actor(env, expert, 10, 3));
  }
  SUBCASE("episode count must be positive") {
    CHECK_THROWS_AS(evaluate_actor(env, expert, 0, 3), std::invalid_argument);
  }
}

TEST_CASE("normalized_score is affine and order-preserving") {
  EnvSpec env = env_from_id("SparseReach");
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    double a = rng.uniform(-100.0, 100.0), b = rng.uniform(-100.0, 100.0);
    if (a < b) std::swap(a, b);
    CHECK(normalized_score(a, env) >= normalized_score(b, env));
    double mid = 0.5 * (a + b);
    CHECK(normalized_score(mid, env) ==
          doctest::Approx(0.5 * (normalized_score(a, env) + normalized_score(b, env)))
              .epsilon(1e-9));
  }
}

TEST_CASE("actor outputs respect the action bounds") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 5, 41);
  AgentConfig cfg = AgentConfig::desk();
  cfg.gradient_steps = 50;
  cfg.batch_size = 32;
  cfg.seed = 1;
  Policy p = train_policy(d, cfg);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> s{rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)};
    auto a = p.act(s);
    CHECK(a[0] >= -1.0);
    CHECK(a[0] <= 1.0);
  }
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 5, 43);
  AgentConfig cfg = AgentConfig::desk();
  cfg.gradient_steps = 120;
  cfg.batch_size = 32;
  cfg.seed = 9;
  Policy a = train_policy(d, cfg);
  Policy b = train_policy(d, cfg);
  CHECK(a.actor.params() == b.actor.params());
  CHECK(a.critic1.params() == b.critic1.params());
  CHECK(evaluate_policy(env, a, 5, 1) == evaluate_policy(env, b, 5, 1));

  auto dir = std::filesystem::temp_directory_path() / "otto_policy_rt";
  std::filesystem::remove_all(dir);
  save_policy(a, dir);
  Policy back = load_policy(dir);
  CHECK(back.actor.params() == a.actor.params());
  CHECK(back.critic2.params() == a.critic2.params());
  CHECK(back.act({0.1, 0.0}) == a.act({0.1, 0.0}));
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty dataset is rejected") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::medium, 2, 43);
  d.trajectories.clear();
  CHECK_THROWS_AS(train_policy(d, AgentConfig::desk()), std::invalid_argument);
}

TEST_CASE("reference training runs set the score bar") {
  EnvSpec env = env_from_id("LineReach");
  AgentConfig cfg = AgentConfig::desk();
  cfg.seed = 3;

  SUBCASE("expert-only data trains to a high normalized score") {
    OfflineDataset d = collect_dataset(env, PolicyId::expert, 40, 47);
    Policy p = train_policy(d, cfg);
    double score = normalized_score(evaluate_policy(env, p, 10, 7), env);
    CHECK(score >= 80.0);
  }
  SUBCASE("uniform-random data stays low") {
    OfflineDataset d = random_policy_dataset(env, 40, 49);
    Policy p = train_policy(d, cfg);
    double score = normalized_score(evaluate_policy(env, p, 10, 7), env);
    CHECK(score <= 20.0);
  }
}

TEST_CASE("behavior-cloning limit: action error decreases over checkpoints") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset d = collect_dataset(env, PolicyId::expert, 20, 53);
  AgentConfig cfg = AgentConfig::desk();
  cfg.gradient_steps = 2000;
  cfg.alpha_bc = 1e-8;  // the Q term vanishes and the actor reduces to cloning
  cfg.seed = 5;

  std::vector<double> errors;
  auto probe = [&](int, const Policy& p) {
    double mse = 0.0;
    size_t n = 0;
    for (const auto& tr : d.trajectories)
      for (size_t i = 0; i < tr.steps.size(); i += 7) {
        auto a = p.act(tr.steps[i].state);
        auto e = expert_action(env, tr.steps[i].state);
        for (size_t c = 0; c < a.size(); ++c) mse += (a[c] - e[c]) * (a[c] - e[c]);
        ++n;
      }
    errors.push_back(mse / double(n));
  };
  train_policy(d, cfg, probe, 400);
  REQUIRE(errors.size() == 5);
  for (size_t i = 1; i < errors.size(); ++i) CHECK(errors[i] < errors[i - 1] + 1e-6);
  CHECK(errors.back() < 0.25 * errors.front());
}
