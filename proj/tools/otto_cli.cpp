#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "otto/experiment.hpp"

namespace fs = std::filesystem;
using namespace otto;

namespace {

ExperimentConfig config_or_default(const std::string& config_path, const std::string& env_id) {
  if (!config_path.empty()) return load_config(config_path);
  return default_experiment_config(env_id);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"World-model trajectory augmentation for offline RL"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/out", env_id = "LineReach", mode_name, policy_id =
      "medium";
  std::string data_dir, generated_dir, bundle_dir, policy_dir, modes_arg;
  uint64_t seed = 0;
  int n_traj = 100, episodes = 10;

  auto* collect = app.add_subcommand("collect", "Collect an offline dataset");
  collect->add_option("--env", env_id, "environment id");
  collect->add_option("--policy", policy_id, "behavior policy");
  collect->add_option("--n", n_traj, "number of trajectories");
  collect->add_option("--seed", seed, "dataset seed");
  collect->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train_world = app.add_subcommand("train-world", "Train the world-model ensemble");
  train_world->add_option("--config", config_path, "experiment config JSON");
  train_world->add_option("--data", data_dir, "input dataset directory")->required();
  train_world->add_option("--seed", seed, "run seed");
  train_world->add_option("--out", out_dir, "output bundle directory")->required();

  auto* generate = app.add_subcommand("generate", "Generate corrected trajectories");
  generate->add_option("--config", config_path, "experiment config JSON");
  generate->add_option("--data", data_dir, "input dataset directory")->required();
  generate->add_option("--bundle", bundle_dir, "trained bundle directory")->required();
  generate->add_option("--seed", seed, "run seed");
  generate->add_option("--mode", mode_name, "original|single|no_correct|otto");
  generate->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train_policy_cmd = app.add_subcommand("train-policy", "Train the offline learner");
  train_policy_cmd->add_option("--config", config_path, "experiment config JSON");
  train_policy_cmd->add_option("--data", data_dir, "original dataset directory")->required();
  train_policy_cmd->add_option("--generated", generated_dir, "generated dataset directory");
  train_policy_cmd->add_option("--seed", seed, "run seed");
  train_policy_cmd->add_option("--out", out_dir, "output policy directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a trained policy");
  evaluate->add_option("--policy", policy_dir, "policy directory")->required();
  evaluate->add_option("--env", env_id, "environment id");
  evaluate->add_option("--episodes", episodes, "evaluation episodes");
  evaluate->add_option("--seed", seed, "evaluation seed");

  auto* experiment = app.add_subcommand("experiment", "Run the full pipeline over the seed set");
  experiment->add_option("--config", config_path, "experiment config JSON");
  experiment->add_option("--env", env_id, "environment id (when no config given)");
  experiment->add_option("--mode", mode_name, "original|single|no_correct|otto");
  experiment->add_option("--seed", seed, "run a single seed instead of the config's seed set");
  bool single_seed = false;
  experiment->add_flag("--one-seed", single_seed, "restrict to --seed only");
  experiment->add_option("--out", out_dir, "run directory")->required();

  auto* compare = app.add_subcommand("compare", "Compare modes on one dataset");
  compare->add_option("--config", config_path, "experiment config JSON");
  compare->add_option("--env", env_id, "environment id (when no config given)");
  compare->add_option("--modes", modes_arg, "comma-separated mode list")
      ->default_val("original,no_correct,otto");
  compare->add_option("--out", out_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect->parsed()) {
      EnvSpec env = env_from_id(env_id);
      OfflineDataset d = collect_dataset(env, policy_from_string(policy_id), n_traj, seed);
      write_dataset(d, out_dir);
      std::cout << "wrote " << d.trajectories.size() << " trajectories (" << d.transition_count()
                << " transitions) to " << out_dir << "\n";
    } else if (train_world->parsed()) {
      OfflineDataset d = read_dataset(data_dir);
      ExperimentConfig cfg = config_or_default(config_path, d.env_id);
      EnsembleBundle bundle = world_stage(cfg, d, seed,
                                          [](const char* head, int64_t step, double loss) {
                                            if (step % 2000 == 0)
                                              std::cout << "[" << head << "] step " << step
                                                        << " loss " << loss << "\n";
                                          });
      save_bundle(bundle, out_dir);
      std::cout << "wrote bundle (" << bundle.state_models().size() << " state, "
                << bundle.reward_models().size() << " reward snapshots) to " << out_dir << "\n";
    } else if (generate->parsed()) {
      OfflineDataset d = read_dataset(data_dir);
      EnsembleBundle bundle = load_bundle(bundle_dir);
      ExperimentConfig cfg = config_or_default(config_path, d.env_id);
      if (!mode_name.empty()) cfg.mode = mode_from_string(mode_name);
      cfg = effective_config(cfg);
      OfflineDataset gen = generate_stage(cfg, d, bundle, seed);
      write_dataset(gen, out_dir);
      std::cout << "generated " << gen.trajectories.size() << " trajectories ("
                << gen.transition_count() << " transitions, ratio "
                << augmentation_ratio(d, gen) << ") to " << out_dir << "\n";
    } else if (train_policy_cmd->parsed()) {
      OfflineDataset d = read_dataset(data_dir);
      ExperimentConfig cfg = config_or_default(config_path, d.env_id);
      OfflineDataset mixed = d;
      if (!generated_dir.empty()) mixed = mix_datasets(d, read_dataset(generated_dir));
      Policy p = policy_stage(cfg, mixed, seed);
      save_policy(p, out_dir);
      std::cout << "wrote policy to " << out_dir << "\n";
    } else if (evaluate->parsed()) {
      Policy p = load_policy(policy_dir);
      EnvSpec env = env_from_id(env_id);
      double ret = evaluate_policy(env, p, episodes, seed);
      std::cout << "mean_return " << ret << " normalized_score " << normalized_score(ret, env)
                << "\n";
    } else if (experiment->parsed()) {
      ExperimentConfig cfg = config_or_default(config_path, env_id);
      if (!mode_name.empty()) cfg.mode = mode_from_string(mode_name);
      if (single_seed) cfg.seeds = {seed};
      Report rep = run_experiment(cfg, out_dir, true);
      std::cout << to_string(rep.config.mode) << ": mean score " << rep.mean_score << " +- "
                << rep.std_score << " over " << rep.seeds.size() << " seeds\n";
    } else if (compare->parsed()) {
      ExperimentConfig base = config_or_default(config_path, env_id);
      std::vector<ExperimentConfig> cfgs;
      std::string item;
      for (std::stringstream ss(modes_arg); std::getline(ss, item, ',');) {
        ExperimentConfig c = base;
        c.mode = mode_from_string(item);
        cfgs.push_back(effective_config(c));
      }
      Comparison cmp = compare_modes(cfgs, out_dir, true);
      std::cout << "mode        mean    std     delta_vs_original\n";
      for (const auto& row : cmp.rows)
        std::cout << to_string(row.mode) << (to_string(row.mode).size() < 8 ? "\t\t" : "\t")
                  << row.mean_score << "\t" << row.std_score << "\t" << row.delta_vs_original
                  << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
