#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "otto/experiment.hpp"

using namespace otto;
namespace fs = std::filesystem;

namespace {

// Small enough for test runtime while exercising every stage.
ExperimentConfig tiny_config(const std::string& env_id) {
  ExperimentConfig cfg = default_experiment_config(env_id);
  cfg.dataset.n_traj = 6;
  cfg.world.model.embed_dim = 8;
  cfg.world.model.n_layer = 1;
  cfg.world.model.n_head = 2;
  cfg.world.model.context_len = 3;
  cfg.world.schedule = {1e-3, 20, 40, 4};
  cfg.world.batch_size = 16;
  cfg.generation.h = 5;
  cfg.generation.delta = 0.2;
  cfg.agent.gradient_steps = 150;
  cfg.agent.batch_size = 32;
  cfg.eval_episodes = 3;
  cfg.seeds = {0, 1};
  return cfg;
}

}  // namespace

TEST_CASE("config round-trips through JSON") {
  ExperimentConfig cfg = default_experiment_config("SparseReach");
  cfg.mode = Mode::no_correct;
  cfg.seeds = {3, 5, 8};
  ExperimentConfig back = parse_config(serialize_config(cfg));
  CHECK(back == cfg);
}

TEST_CASE("config parse failures carry context") {
  CHECK_THROWS_AS(parse_config("{"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("{}"), std::runtime_error);
}

TEST_CASE("mode forcings") {
  ExperimentConfig cfg = default_experiment_config("LineReach");
  cfg.mode = Mode::single;
  ExperimentConfig eff = effective_config(cfg);
  CHECK(eff.world.schedule.n_cycles == 1);
  CHECK(eff.evaluator.pass_through);

  cfg.mode = Mode::no_correct;
  eff = effective_config(cfg);
  CHECK(eff.world.schedule.n_cycles == cfg.world.schedule.n_cycles);
  CHECK(eff.evaluator.pass_through);

  cfg.mode = Mode::otto_full;
  eff = effective_config(cfg);
  CHECK_FALSE(eff.evaluator.pass_through);

  // validation rejects un-forced single configs
  ExperimentConfig bad = default_experiment_config("LineReach");
  bad.mode = Mode::single;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
  CHECK_NOTHROW(validate_config(effective_config(bad)));
}

TEST_CASE("mode names round-trip") {
  for (Mode m : {Mode::original, Mode::single, Mode::no_correct, Mode::otto_full})
    CHECK(mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(mode_from_string("hybrid"), std::invalid_argument);
}

TEST_CASE("original mode produces no generated data") {
  ExperimentConfig cfg = tiny_config("LineReach");
  cfg.mode = Mode::original;
  cfg.seeds = {0};
  auto out = fs::temp_directory_path() / "otto_exp_original";
  fs::remove_all(out);
  Report rep = run_experiment(cfg, out);
  REQUIRE(rep.seeds.size() == 1);
  CHECK(rep.seeds[0].generated_transitions == 0);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "seed_0" / "dataset" / "data.bin"));
  CHECK_FALSE(fs::exists(out / "seed_0" / "generated"));

  std::ifstream csv(out / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "run_id,mode,strategy,seed,delta,epsilon,h,omega,K,Q,mean_return,normalized_score,"
        "wall_seconds");
  fs::remove_all(out);
}

TEST_CASE("full tiny pipeline runs in every mode and compares") {
  ExperimentConfig base = tiny_config("LineReach");
  base.seeds = {0};
  auto out = fs::temp_directory_path() / "otto_exp_compare";
  fs::remove_all(out);

  std::vector<ExperimentConfig> cfgs;
  for (Mode m : {Mode::original, Mode::single, Mode::no_correct, Mode::otto_full}) {
    ExperimentConfig c = base;
    c.mode = m;
    cfgs.push_back(effective_config(c));
  }
  Comparison cmp = compare_modes(cfgs, out);
  REQUIRE(cmp.rows.size() == 4);
  CHECK(cmp.rows[0].mode == Mode::original);
  CHECK(cmp.rows[1].mode == Mode::single);
  CHECK(cmp.rows[2].mode == Mode::no_correct);
  CHECK(cmp.rows[3].mode == Mode::otto_full);
  CHECK(cmp.rows[0].delta_vs_original == 0.0);
  for (const auto& row : cmp.rows)
    CHECK(row.delta_vs_original ==
          doctest::Approx(row.mean_score - cmp.rows[0].mean_score).epsilon(1e-12));
  CHECK(fs::exists(out / "compare.csv"));
  CHECK(fs::exists(out / "otto" / "seed_0" / "generated" / "meta.json"));
  fs::remove_all(out);
}

TEST_CASE("compare_modes validates its inputs") {
  ExperimentConfig a = tiny_config("LineReach");
  CHECK_THROWS_AS(compare_modes({a}, fs::temp_directory_path() / "otto_cmp_bad"),
                  std::invalid_argument);
  ExperimentConfig b = tiny_config("SparseReach");
  CHECK_THROWS_AS(compare_modes({a, b}, fs::temp_directory_path() / "otto_cmp_bad"),
                  std::invalid_argument);
}

TEST_CASE("run_experiment equals the composed stage pipeline") {
  ExperimentConfig cfg = effective_config(tiny_config("LineReach"));
  cfg.mode = Mode::no_correct;
  cfg = effective_config(cfg);
  cfg.seeds = {4};
  auto out = fs::temp_directory_path() / "otto_exp_stages";
  fs::remove_all(out);
  Report rep = run_experiment(cfg, out);

  OfflineDataset dataset = collect_stage(cfg, 4);
  EnsembleBundle bundle = world_stage(cfg, dataset, 4);
  OfflineDataset generated = generate_stage(cfg, dataset, bundle, 4);
  OfflineDataset mixed = mix_datasets(dataset, generated);
  Policy policy = policy_stage(cfg, mixed, 4);
  double ret = evaluate_stage(cfg, policy, 4);

  CHECK(rep.seeds[0].mean_return == doctest::Approx(ret).epsilon(1e-12));
  CHECK(rep.seeds[0].generated_transitions == generated.transition_count());
  fs::remove_all(out);
}
