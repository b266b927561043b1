#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "otto/env.hpp"
#include "otto/worldtrain.hpp"

using namespace otto;

namespace {

Stats identity_stats(int d_s, int d_a) {
  Stats st;
  st.state_mean.assign(d_s, 0.0);
  st.state_std.assign(d_s, 1.0);
  st.action_mean.assign(d_a, 0.0);
  st.action_std.assign(d_a, 1.0);
  return st;
}

// Zero model except for the head bias: predicts exactly `value` everywhere.
SequenceModel constant_model(ModelConfig cfg, std::vector<double> value) {
  SequenceModel m(cfg);
  for (const auto& ent : model_layout(cfg)) {
    if (ent.name != "head_b") continue;
    for (size_t i = 0; i < ent.size; ++i) m.params()[ent.offset + i] = value[i];
  }
  return m;
}

ModelConfig tiny_cfg(HeadKind head, int d_s, int d_a) {
  ModelConfig c;
  c.embed_dim = 8;
  c.n_layer = 1;
  c.n_head = 2;
  c.dropout = 0.1;
  c.max_step = 64;
  c.context_len = 3;
  c.head = head;
  c.d_s = d_s;
  c.d_a = d_a;
  return c;
}

TokenWindow dummy_window(const ModelConfig& cfg, const Stats& st) {
  std::vector<Step> steps(1);
  steps[0].state.assign(cfg.d_s, 0.0);
  steps[0].action.assign(cfg.d_a, 0.0);
  steps[0].t = 0;
  return make_window(steps, cfg.context_len, st);
}

}  // namespace

TEST_CASE("lr_at matches the closed form at the named points") {
  LRSchedule sched;  // paper-scale defaults
  CHECK(lr_at(0, sched) == doctest::Approx(1e-9).epsilon(1e-12));
  CHECK(lr_at(sched.warmup_steps, sched) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(sched.warmup_steps + sched.cycle_steps / 2, sched) ==
        doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, sched), std::invalid_argument);
}

TEST_CASE("lr_at is cycle-periodic after warmup") {
  LRSchedule sched = LRSchedule::desk();
  for (int64_t t : {sched.warmup_steps, sched.warmup_steps + 1, sched.warmup_steps + 3777,
                    sched.warmup_steps + sched.cycle_steps - 1})
    CHECK(lr_at(t, sched) == lr_at(t + sched.cycle_steps, sched));
}

TEST_CASE("lr_at equals an independent evaluation on a grid") {
  LRSchedule sched{2.5e-4, 137, 411, 3};
  for (int64_t t = 0; t < sched.total_steps(); t += 7) {
    double expect;
    if (t < 137)
      expect = double(t + 1) * 2.5e-4 / 137.0;
    else
      expect = 0.5 * 2.5e-4 * (1.0 + std::cos(M_PI * double((t - 137) % 411) / 411.0));
    CHECK(lr_at(t, sched) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("ensemble mean and population std") {
  const int d_s = 1, d_a = 1;
  Stats st = identity_stats(d_s, d_a);
  ModelConfig scfg = tiny_cfg(HeadKind::state, d_s, d_a);
  ModelConfig rcfg = tiny_cfg(HeadKind::reward, d_s, d_a);

  SUBCASE("two state snapshots predicting 1 and 3 give mean 2, std 1") {
    // raw last state is 0 and std is 1, so the delta equals the prediction
    EnsembleBundle b({constant_model(scfg, {1.0}), constant_model(scfg, {3.0})},
                     {constant_model(rcfg, {0.0})}, st);
    auto out = b.predict_state(dummy_window(scfg, st));
    CHECK(out.mean[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(out.stddev[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("reward predictions {0.5, 0.9, 0.7, 0.7} give mean 0.7, std sqrt(0.02)") {
    std::vector<SequenceModel> rms;
    for (double v : {0.5, 0.9, 0.7, 0.7}) rms.push_back(constant_model(rcfg, {v}));
    EnsembleBundle b({constant_model(scfg, {0.0})}, std::move(rms), st);
    auto out = b.predict_reward(dummy_window(rcfg, st));
    CHECK(out.mean == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(out.stddev == doctest::Approx(std::sqrt(0.02)).epsilon(1e-9));
  }

  SUBCASE("singletons and duplicates have zero std") {
    EnsembleBundle one({constant_model(scfg, {1.5})}, {constant_model(rcfg, {0.3})}, st);
    CHECK(one.predict_state(dummy_window(scfg, st)).stddev[0] == 0.0);
    CHECK(one.predict_reward(dummy_window(rcfg, st)).stddev == 0.0);

    EnsembleBundle dup({constant_model(scfg, {1.5}), constant_model(scfg, {1.5})},
                       {constant_model(rcfg, {0.3}), constant_model(rcfg, {0.3})}, st);
    CHECK(dup.predict_state(dummy_window(scfg, st)).stddev[0] == 0.0);
    CHECK(dup.predict_reward(dummy_window(rcfg, st)).stddev == 0.0);
  }

  SUBCASE("mean is permutation-invariant, std non-negative") {
    EnsembleBundle a({constant_model(scfg, {1.0}), constant_model(scfg, {3.0}),
                      constant_model(scfg, {-0.5})},
                     {constant_model(rcfg, {0.0})}, st);
    EnsembleBundle b({constant_model(scfg, {-0.5}), constant_model(scfg, {1.0}),
                      constant_model(scfg, {3.0})},
                     {constant_model(rcfg, {0.0})}, st);
    auto pa = a.predict_state(dummy_window(scfg, st));
    auto pb = b.predict_state(dummy_window(scfg, st));
    CHECK(pa.mean[0] == doctest::Approx(pb.mean[0]).epsilon(1e-12));
    CHECK(pa.stddev[0] == doctest::Approx(pb.stddev[0]).epsilon(1e-12));
    CHECK(pa.stddev[0] >= 0.0);
  }
}

TEST_CASE("bundle construction requires at least one snapshot per head") {
  Stats st = identity_stats(1, 1);
  CHECK_THROWS_AS(EnsembleBundle({}, {}, st), std::invalid_argument);
}

TEST_CASE("micro training run: snapshot counts, distinctness, determinism") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset data = collect_dataset(env, PolicyId::medium, 4, 77);
  ModelConfig cfg = tiny_cfg(HeadKind::state, env.d_s, env.d_a);
  LRSchedule sched{1e-3, 20, 30, 2};

  EnsembleBundle a = train_world_ensemble(data, cfg, sched, 8, 5);
  CHECK(a.state_models().size() == 2);
  CHECK(a.reward_models().size() == 2);

  auto l2 = [](const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(acc);
  };
  CHECK(l2(a.state_models()[0].params(), a.state_models()[1].params()) > 0.0);
  CHECK(l2(a.reward_models()[0].params(), a.reward_models()[1].params()) > 0.0);

  EnsembleBundle b = train_world_ensemble(data, cfg, sched, 8, 5);
  CHECK(a.state_models()[0].params() == b.state_models()[0].params());
  CHECK(a.state_models()[1].params() == b.state_models()[1].params());
  CHECK(a.reward_models()[1].params() == b.reward_models()[1].params());

  SUBCASE("bundle io round-trips bit-exactly") {
    auto dir = std::filesystem::temp_directory_path() / "otto_bundle_rt";
    std::filesystem::remove_all(dir);
    save_bundle(a, dir);
    EnsembleBundle back = load_bundle(dir);
    CHECK(back.state_models().size() == a.state_models().size());
    for (size_t k = 0; k < a.state_models().size(); ++k)
      CHECK(back.state_models()[k].params() == a.state_models()[k].params());
    for (size_t q = 0; q < a.reward_models().size(); ++q)
      CHECK(back.reward_models()[q].params() == a.reward_models()[q].params());
    CHECK(back.stats() == a.stats());
    std::filesystem::remove_all(dir);
  }

  SUBCASE("one-step diagnostics run on held-out data") {
    OfflineDataset heldout = collect_dataset(env, PolicyId::medium, 2, 78);
    OneStepError err = evaluate_one_step(a, heldout);
    CHECK(std::isfinite(err.state_mse));
    CHECK(std::isfinite(err.reward_mse));
    CHECK(err.state_mse >= 0.0);
  }
}

TEST_CASE("training rejects impossible setups") {
  EnvSpec env = env_from_id("LineReach");
  OfflineDataset data = collect_dataset(env, PolicyId::medium, 2, 1);
  ModelConfig cfg = tiny_cfg(HeadKind::state, env.d_s, env.d_a);
  OfflineDataset empty = data;
  empty.trajectories.clear();
  CHECK_THROWS_AS(train_world_ensemble(empty, cfg, LRSchedule{1e-3, 5, 5, 1}, 4, 0),
                  std::invalid_argument);

  OfflineDataset stub = data;
  stub.trajectories.resize(1);
  stub.trajectories[0].steps.resize(1);  // no (state, next-state) pair anywhere
  CHECK_THROWS_AS(train_world_ensemble(stub, cfg, LRSchedule{1e-3, 5, 5, 1}, 4, 0),
                  std::invalid_argument);
}
