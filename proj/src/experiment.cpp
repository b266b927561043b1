#include "otto/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "json.hpp"
#include "otto/rng.hpp"

namespace otto {

using nlohmann::json;

Mode mode_from_string(const std::string& name) {
  if (name == "original") return Mode::original;
  if (name == "single") return Mode::single;
  if (name == "no_correct") return Mode::no_correct;
  if (name == "otto") return Mode::otto_full;
  throw std::invalid_argument("unknown mode: " + name);
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::original: return "original";
    case Mode::single: return "single";
    case Mode::no_correct: return "no_correct";
    case Mode::otto_full: return "otto";
  }
  return "?";
}

ExperimentConfig default_experiment_config(const std::string& env_id) {
  ExperimentConfig cfg;
  cfg.env_id = env_id;
  cfg.run_id = env_id + "-medium";
  cfg.dataset = {"medium", 100, 1};
  EnvSpec env = env_from_id(env_id);
  cfg.world.model = desk_model_config(env.d_s, env.d_a, env.horizon);
  cfg.world.schedule = LRSchedule::pipeline();
  cfg.world.batch_size = 64;
  cfg.world.seed = 2;
  cfg.generation.strategy = Strategy::softmax;
  cfg.generation.h = 10;
  cfg.generation.epsilon = 0.1;
  cfg.generation.delta = 0.10;
  cfg.generation.selection_temperature = 1.0;
  cfg.generation.seed = 3;
  cfg.evaluator = EvaluatorConfig{};
  cfg.agent = AgentConfig::desk();
  cfg.agent.seed = 4;
  cfg.mode = Mode::otto_full;
  cfg.eval_episodes = 10;
  cfg.seeds = {0, 1, 2, 3, 4};
  return cfg;
}

namespace {

json model_cfg_to_json(const ModelConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"n_layer", c.n_layer},
              {"n_head", c.n_head},
              {"dropout", c.dropout},
              {"max_step", c.max_step},
              {"context_len", c.context_len},
              {"d_s", c.d_s},
              {"d_a", c.d_a}};
}

ModelConfig model_cfg_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_layer = j.at("n_layer").get<int>();
  c.n_head = j.at("n_head").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_step = j.at("max_step").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.d_s = j.at("d_s").get<int>();
  c.d_a = j.at("d_a").get<int>();
  return c;
}

json agent_cfg_to_json(const AgentConfig& c) {
  return json{{"gamma", c.gamma},
              {"tau", c.tau},
              {"alpha_bc", c.alpha_bc},
              {"policy_noise", c.policy_noise},
              {"noise_clip", c.noise_clip},
              {"lr", c.lr},
              {"policy_delay", c.policy_delay},
              {"hidden", c.hidden},
              {"gradient_steps", c.gradient_steps},
              {"batch_size", c.batch_size},
              {"seed", c.seed}};
}

AgentConfig agent_cfg_from_json(const json& j) {
  AgentConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.alpha_bc = j.at("alpha_bc").get<double>();
  c.policy_noise = j.at("policy_noise").get<double>();
  c.noise_clip = j.at("noise_clip").get<double>();
  c.lr = j.at("lr").get<double>();
  c.policy_delay = j.at("policy_delay").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.gradient_steps = j.at("gradient_steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  json j{{"version", c.version},
         {"run_id", c.run_id},
         {"env_id", c.env_id},
         {"dataset",
          {{"policy_id", c.dataset.policy_id}, {"n_traj", c.dataset.n_traj},
           {"seed", c.dataset.seed}}},
         {"world",
          {{"model", model_cfg_to_json(c.world.model)},
           {"schedule",
            {{"alpha0", c.world.schedule.alpha0},
             {"warmup_steps", c.world.schedule.warmup_steps},
             {"cycle_steps", c.world.schedule.cycle_steps},
             {"n_cycles", c.world.schedule.n_cycles}}},
           {"batch_size", c.world.batch_size},
           {"seed", c.world.seed}}},
         {"generation",
          {{"strategy", to_string(c.generation.strategy)},
           {"h", c.generation.h},
           {"epsilon", c.generation.epsilon},
           {"delta", c.generation.delta},
           {"selection_temperature", c.generation.selection_temperature},
           {"seed", c.generation.seed}}},
         {"evaluator", {{"omega", c.evaluator.omega}, {"pass_through", c.evaluator.pass_through}}},
         {"agent", agent_cfg_to_json(c.agent)},
         {"mode", to_string(c.mode)},
         {"eval_episodes", c.eval_episodes},
         {"seeds", c.seeds}};
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config parse error: ") + e.what());
  }
  try {
    ExperimentConfig c;
    c.version = j.at("version").get<int>();
    if (c.version != 1) throw std::runtime_error("unsupported config version");
    c.run_id = j.at("run_id").get<std::string>();
    c.env_id = j.at("env_id").get<std::string>();
    const json& d = j.at("dataset");
    c.dataset = {d.at("policy_id").get<std::string>(), d.at("n_traj").get<int>(),
                 d.at("seed").get<uint64_t>()};
    const json& w = j.at("world");
    c.world.model = model_cfg_from_json(w.at("model"));
    const json& s = w.at("schedule");
    c.world.schedule = {s.at("alpha0").get<double>(), s.at("warmup_steps").get<int64_t>(),
                        s.at("cycle_steps").get<int64_t>(), s.at("n_cycles").get<int>()};
    c.world.batch_size = w.at("batch_size").get<int>();
    c.world.seed = w.at("seed").get<uint64_t>();
    const json& g = j.at("generation");
    c.generation.strategy = strategy_from_string(g.at("strategy").get<std::string>());
    c.generation.h = g.at("h").get<int>();
    c.generation.epsilon = g.at("epsilon").get<double>();
    c.generation.delta = g.at("delta").get<double>();
    c.generation.selection_temperature = g.at("selection_temperature").get<double>();
    c.generation.seed = g.at("seed").get<uint64_t>();
    const json& e = j.at("evaluator");
    c.evaluator.omega = e.at("omega").get<double>();
    c.evaluator.pass_through = e.at("pass_through").get<bool>();
    c.agent = agent_cfg_from_json(j.at("agent"));
    c.mode = mode_from_string(j.at("mode").get<std::string>());
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config field error: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot open config " + file.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

ExperimentConfig effective_config(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  switch (c.mode) {
    case Mode::single:
      c.world.schedule.n_cycles = 1;  // K = Q = 1
      c.evaluator.pass_through = true;
      break;
    case Mode::no_correct:
      c.evaluator.pass_through = true;
      break;
    case Mode::original:
    case Mode::otto_full:
      break;
  }
  return c;
}

void validate_config(const ExperimentConfig& cfg) {
  env_from_id(cfg.env_id);
  policy_from_string(cfg.dataset.policy_id);
  if (cfg.dataset.n_traj < 1) throw std::invalid_argument("config: n_traj must be >= 1");
  if (cfg.generation.h < 2) throw std::invalid_argument("config: h must be >= 2");
  if (cfg.generation.delta <= 0.0) throw std::invalid_argument("config: delta must be > 0");
  if (cfg.generation.epsilon < 0.0) throw std::invalid_argument("config: epsilon must be >= 0");
  if (cfg.evaluator.omega <= 0.0) throw std::invalid_argument("config: omega must be > 0");
  if (cfg.eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
  if (cfg.seeds.empty()) throw std::invalid_argument("config: seed set must be non-empty");
  if (cfg.mode == Mode::single && cfg.world.schedule.n_cycles != 1)
    throw std::invalid_argument("config: mode=single requires a single cycle (K = Q = 1)");
  if ((cfg.mode == Mode::single || cfg.mode == Mode::no_correct) && !cfg.evaluator.pass_through)
    throw std::invalid_argument("config: this mode requires evaluator pass-through");
}

uint64_t stage_seed(uint64_t cfg_seed, uint64_t run_seed, const char* tag) {
  return derive_seed(splitmix64_mix(cfg_seed) ^ splitmix64_mix(run_seed + 0x51ed270b), tag);
}

OfflineDataset collect_stage(const ExperimentConfig& cfg, uint64_t run_seed) {
  EnvSpec env = env_from_id(cfg.env_id);
  return collect_dataset(env, policy_from_string(cfg.dataset.policy_id), cfg.dataset.n_traj,
                         stage_seed(cfg.dataset.seed, run_seed, "dataset"));
}

EnsembleBundle world_stage(const ExperimentConfig& cfg, const OfflineDataset& dataset,
                           uint64_t run_seed, const TrainProgress& progress) {
  return train_world_ensemble(dataset, cfg.world.model, cfg.world.schedule, cfg.world.batch_size,
                              stage_seed(cfg.world.seed, run_seed, "world"), progress);
}

OfflineDataset generate_stage(const ExperimentConfig& cfg, const OfflineDataset& dataset,
                              const WorldModel& world, uint64_t run_seed) {
  GenerationConfig gen = cfg.generation;
  gen.seed = stage_seed(cfg.generation.seed, run_seed, "generate");
  return generate_dataset(dataset, world, env_from_id(cfg.env_id), gen, cfg.evaluator);
}

Policy policy_stage(const ExperimentConfig& cfg, const OfflineDataset& mixed, uint64_t run_seed) {
  AgentConfig agent = cfg.agent;
  agent.seed = stage_seed(cfg.agent.seed, run_seed, "agent");
  return train_policy(mixed, agent);
}

double evaluate_stage(const ExperimentConfig& cfg, const Policy& policy, uint64_t run_seed) {
  return evaluate_policy(env_from_id(cfg.env_id), policy, cfg.eval_episodes,
                         stage_seed(0xe7a1, run_seed, "eval"));
}

namespace {

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

struct StageGuard {
  const char* name;
  template <class F>
  auto run(F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage '") + name + "' failed: " + e.what());
    }
  }
};

}  // namespace

std::string metrics_csv_header() {
  return "run_id,mode,strategy,seed,delta,epsilon,h,omega,K,Q,mean_return,normalized_score,"
         "wall_seconds\n";
}

std::string metrics_csv_row(const ExperimentConfig& cfg, const SeedResult& r) {
  const int kq = cfg.world.schedule.n_cycles;
  std::string row;
  row += cfg.run_id + "," + to_string(cfg.mode) + "," + to_string(cfg.generation.strategy) + ",";
  row += std::to_string(r.seed) + ",";
  row += fmt(cfg.generation.delta, 4) + "," + fmt(cfg.generation.epsilon, 4) + ",";
  row += std::to_string(cfg.generation.h) + "," + fmt(cfg.evaluator.omega, 4) + ",";
  row += std::to_string(kq) + "," + std::to_string(kq) + ",";
  row += fmt(r.mean_return) + "," + fmt(r.normalized_score) + "," + fmt(r.wall_seconds, 3) + "\n";
  return row;
}

Report run_experiment(const ExperimentConfig& raw_cfg, const std::filesystem::path& out_dir,
                      bool verbose) {
  ExperimentConfig cfg = effective_config(raw_cfg);
  validate_config(cfg);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cf(out_dir / "config.json");
    cf << serialize_config(cfg);
  }
  EnvSpec env = env_from_id(cfg.env_id);

  Report report;
  report.config = cfg;
  for (uint64_t run_seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto seed_dir = out_dir / ("seed_" + std::to_string(run_seed));
    std::filesystem::create_directories(seed_dir);

    OfflineDataset dataset =
        StageGuard{"collect"}.run([&] { return collect_stage(cfg, run_seed); });
    write_dataset(dataset, seed_dir / "dataset");

    OfflineDataset mixed = dataset;
    size_t generated_transitions = 0;
    if (cfg.mode != Mode::original) {
      TrainProgress progress;
      if (verbose)
        progress = [](const char* head, int64_t step, double loss) {
          std::cout << "    [" << head << "] step " << step << " loss " << loss << "\n";
        };
      EnsembleBundle bundle = StageGuard{"train-world"}.run(
          [&] { return world_stage(cfg, dataset, run_seed, progress); });
      save_bundle(bundle, seed_dir / "bundle");
      OfflineDataset generated =
          StageGuard{"generate"}.run([&] { return generate_stage(cfg, dataset, bundle, run_seed); });
      write_dataset(generated, seed_dir / "generated");
      generated_transitions = generated.transition_count();
      mixed = StageGuard{"mix"}.run([&] { return mix_datasets(dataset, generated); });
    }

    Policy policy = StageGuard{"train-policy"}.run([&] { return policy_stage(cfg, mixed, run_seed); });
    save_policy(policy, seed_dir / "policy");

    double mean_return =
        StageGuard{"evaluate"}.run([&] { return evaluate_stage(cfg, policy, run_seed); });

    SeedResult r;
    r.seed = run_seed;
    r.mean_return = mean_return;
    r.normalized_score = normalized_score(mean_return, env);
    r.generated_transitions = generated_transitions;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.seeds.push_back(r);
    if (verbose)
      std::cout << "  seed " << run_seed << ": return " << fmt(mean_return) << ", score "
                << fmt(r.normalized_score) << " (" << fmt(r.wall_seconds, 1) << "s)\n";
  }

  double mean = 0.0;
  for (const auto& r : report.seeds) mean += r.normalized_score;
  mean /= double(report.seeds.size());
  double var = 0.0;
  for (const auto& r : report.seeds) {
    double d = r.normalized_score - mean;
    var += d * d;
  }
  report.mean_score = mean;
  report.std_score = std::sqrt(var / double(report.seeds.size()));

  std::ofstream csv(out_dir / "metrics.csv");
  csv << metrics_csv_header();
  for (const auto& r : report.seeds) csv << metrics_csv_row(cfg, r);

  json rep{{"run_id", cfg.run_id},
           {"mode", to_string(cfg.mode)},
           {"mean_score", report.mean_score},
           {"std_score", report.std_score},
           {"seeds", json::array()}};
  for (const auto& r : report.seeds)
    rep["seeds"].push_back({{"seed", r.seed},
                            {"mean_return", r.mean_return},
                            {"normalized_score", r.normalized_score},
                            {"generated_transitions", r.generated_transitions}});
  std::ofstream rf(out_dir / "report.json");
  rf << rep.dump(2) << "\n";
  return report;
}

Comparison compare_modes(const std::vector<ExperimentConfig>& cfgs,
                         const std::filesystem::path& out_dir, bool verbose) {
  if (cfgs.size() < 2) throw std::invalid_argument("compare_modes: need at least two modes");
  for (size_t i = 1; i < cfgs.size(); ++i) {
    if (cfgs[i].env_id != cfgs[0].env_id || !(cfgs[i].dataset == cfgs[0].dataset))
      throw std::invalid_argument("compare_modes: configs must share env and dataset");
  }

  std::vector<std::pair<Mode, Report>> reports;
  for (const auto& cfg : cfgs) {
    if (verbose) std::cout << "mode " << to_string(cfg.mode) << ":\n";
    reports.emplace_back(cfg.mode,
                         run_experiment(cfg, out_dir / to_string(cfg.mode), verbose));
  }

  double original_mean = 0.0;
  bool have_original = false;
  for (const auto& [mode, rep] : reports)
    if (mode == Mode::original) {
      original_mean = rep.mean_score;
      have_original = true;
    }

  Comparison cmp;
  // fixed presentation order
  for (Mode m : {Mode::original, Mode::single, Mode::no_correct, Mode::otto_full}) {
    for (const auto& [mode, rep] : reports) {
      if (mode != m) continue;
      ModeRow row;
      row.mode = mode;
      row.mean_score = rep.mean_score;
      row.std_score = rep.std_score;
      row.delta_vs_original = have_original ? rep.mean_score - original_mean : 0.0;
      cmp.rows.push_back(row);
    }
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "compare.csv");
  csv << "mode,mean_score,std_score,delta_vs_original\n";
  for (const auto& row : cmp.rows)
    csv << to_string(row.mode) << "," << fmt(row.mean_score) << "," << fmt(row.std_score) << ","
        << fmt(row.delta_vs_original) << "\n";
  return cmp;
}

}  // namespace otto
