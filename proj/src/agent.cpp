#include "otto/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "otto/rng.hpp"
#include "otto/seqcore/optim.hpp"

namespace otto {

using nlohmann::json;

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp: needs at least two layer sizes");
  size_t n = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l)
    n += size_t(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
  params_.assign(n, 0.0);
}

void Mlp::init(uint64_t seed) {
  Rng rng = derive_rng(seed, "mlp_init");
  size_t pos = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const double scale = 1.0 / std::sqrt(double(in));  // uniform fan-in init
    for (int i = 0; i < out * in; ++i) params_[pos + i] = rng.uniform(-scale, scale);
    pos += size_t(out) * in;
    for (int i = 0; i < out; ++i) params_[pos + i] = 0.0;
    pos += out;
  }
}

std::vector<double> Mlp::forward(const std::vector<double>& x) const {
  Cache unused;
  return forward(x, unused);
}

std::vector<double> Mlp::forward(const std::vector<double>& x, Cache& cache) const {
  if (int(x.size()) != sizes_.front()) throw std::invalid_argument("Mlp::forward: input dim");
  cache.acts.assign(1, x);
  std::vector<double> cur = x;
  size_t pos = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const double* W = params_.data() + pos;
    const double* b = W + size_t(out) * in;
    std::vector<double> next(out);
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      const double* w = W + size_t(o) * in;
      for (int i = 0; i < in; ++i) acc += w[i] * cur[i];
      next[o] = acc;
    }
    if (l + 2 < sizes_.size())
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    cache.acts.push_back(next);
    cur = std::move(next);
    pos += size_t(out) * in + out;
  }
  return cur;
}

void Mlp::backward(const Cache& cache, const std::vector<double>& dy, std::vector<double>& grad,
                   std::vector<double>* dx) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: grad size");
  std::vector<double> d = dy;
  // per-layer parameter offsets
  std::vector<size_t> offs(sizes_.size() - 1);
  size_t pos = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offs[l] = pos;
    pos += size_t(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
  }
  for (size_t l = sizes_.size() - 1; l-- > 0;) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const std::vector<double>& x = cache.acts[l];
    const double* W = params_.data() + offs[l];
    double* dW = grad.data() + offs[l];
    double* db = dW + size_t(out) * in;
    // through ReLU of this layer's output (not for the final layer)
    if (l + 2 < sizes_.size()) {
      const std::vector<double>& a = cache.acts[l + 1];
      for (int o = 0; o < out; ++o)
        if (a[o] <= 0.0) d[o] = 0.0;
    }
    std::vector<double> dprev(in, 0.0);
    for (int o = 0; o < out; ++o) {
      const double g = d[o];
      db[o] += g;
      if (g == 0.0) continue;
      const double* w = W + size_t(o) * in;
      double* dw = dW + size_t(o) * in;
      for (int i = 0; i < in; ++i) {
        dw[i] += g * x[i];
        dprev[i] += g * w[i];
      }
    }
    d = std::move(dprev);
  }
  if (dx) *dx = std::move(d);
}

namespace {

std::vector<double> normalize_state(const std::vector<double>& s, const Stats& st) {
  std::vector<double> out(s.size());
  for (size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - st.state_mean[i]) / st.state_std[i];
  return out;
}

void squash(const std::vector<double>& pre, const std::vector<double>& lo,
            const std::vector<double>& hi, std::vector<double>& out) {
  out.resize(pre.size());
  for (size_t i = 0; i < pre.size(); ++i) {
    const double center = 0.5 * (lo[i] + hi[i]);
    const double half = 0.5 * (hi[i] - lo[i]);
    out[i] = center + half * std::tanh(pre[i]);
  }
}

struct Transition {
  const Step* step;
  const Step* next;  // nullptr when terminal
};

std::vector<Transition> build_transitions(const OfflineDataset& d) {
  std::vector<Transition> out;
  out.reserve(d.transition_count());
  for (const auto& tr : d.trajectories) {
    for (size_t i = 0; i < tr.steps.size(); ++i) {
      const Step& s = tr.steps[i];
      if (i + 1 < tr.steps.size())
        out.push_back({&s, &tr.steps[i + 1]});
      else if (s.terminal)
        out.push_back({&s, nullptr});
      // a trailing non-terminal step (generated rollout tail) has no bootstrap
      // target and is dropped
    }
  }
  return out;
}

}  // namespace

std::vector<double> Policy::act(const std::vector<double>& state) const {
  std::vector<double> pre = actor.forward(normalize_state(state, stats));
  std::vector<double> a;
  squash(pre, action_low, action_high, a);
  return a;
}

Policy train_policy(const OfflineDataset& dataset, const AgentConfig& cfg,
                    const PolicyCheckpoint& checkpoint, int checkpoint_every) {
  if (dataset.trajectories.empty()) throw std::invalid_argument("train_policy: empty dataset");
  const int d_s = dataset.d_s, d_a = dataset.d_a;
  std::vector<Transition> transitions = build_transitions(dataset);
  if (transitions.empty()) throw std::invalid_argument("train_policy: no usable transitions");

  EnvSpec env = env_from_id(dataset.env_id);

  Policy p;
  p.cfg = cfg;
  p.stats = dataset.stats;
  p.action_low = env.action_low;
  p.action_high = env.action_high;
  p.actor = Mlp({d_s, cfg.hidden, cfg.hidden, d_a});
  p.critic1 = Mlp({d_s + d_a, cfg.hidden, cfg.hidden, 1});
  p.critic2 = Mlp({d_s + d_a, cfg.hidden, cfg.hidden, 1});
  p.actor.init(derive_seed(cfg.seed, "actor"));
  p.critic1.init(derive_seed(cfg.seed, "critic1"));
  p.critic2.init(derive_seed(cfg.seed, "critic2"));

  Mlp actor_t = p.actor, critic1_t = p.critic1, critic2_t = p.critic2;

  OptimizerState actor_opt(p.actor.params().size(), 0.0, 0.0);
  OptimizerState critic1_opt(p.critic1.params().size(), 0.0, 0.0);
  OptimizerState critic2_opt(p.critic2.params().size(), 0.0, 0.0);

  Rng batch_rng = derive_rng(cfg.seed, "batch");
  Rng noise_rng = derive_rng(cfg.seed, "noise");

  std::vector<double> g_actor(p.actor.params().size());
  std::vector<double> g_c1(p.critic1.params().size());
  std::vector<double> g_c2(p.critic2.params().size());
  std::vector<size_t> batch(cfg.batch_size);

  // precomputed normalized states
  std::vector<std::vector<double>> norm_s(transitions.size()), norm_s2(transitions.size());
  for (size_t i = 0; i < transitions.size(); ++i) {
    norm_s[i] = normalize_state(transitions[i].step->state, dataset.stats);
    if (transitions[i].next) norm_s2[i] = normalize_state(transitions[i].next->state, dataset.stats);
  }

  const int B = cfg.batch_size;
  for (int step = 0; step < cfg.gradient_steps; ++step) {
    for (int b = 0; b < B; ++b) batch[b] = size_t(batch_rng.uniform_int(transitions.size()));

    // critic update
    std::fill(g_c1.begin(), g_c1.end(), 0.0);
    std::fill(g_c2.begin(), g_c2.end(), 0.0);
    double critic_loss = 0.0;
    for (int b = 0; b < B; ++b) {
      const Transition& tr = transitions[batch[b]];
      double target = tr.step->reward;
      if (tr.next) {
        std::vector<double> a2_pre = actor_t.forward(norm_s2[batch[b]]);
        std::vector<double> a2;
        squash(a2_pre, p.action_low, p.action_high, a2);
        for (int i = 0; i < d_a; ++i) {
          double eps = noise_rng.gaussian(0.0, cfg.policy_noise);
          eps = std::clamp(eps, -cfg.noise_clip, cfg.noise_clip);
          a2[i] = std::clamp(a2[i] + eps, p.action_low[i], p.action_high[i]);
        }
        std::vector<double> in2 = norm_s2[batch[b]];
        in2.insert(in2.end(), a2.begin(), a2.end());
        double q1t = critic1_t.forward(in2)[0];
        double q2t = critic2_t.forward(in2)[0];
        target += cfg.gamma * std::min(q1t, q2t);
      }
      std::vector<double> in = norm_s[batch[b]];
      in.insert(in.end(), tr.step->action.begin(), tr.step->action.end());
      Mlp::Cache c1, c2;
      double q1 = p.critic1.forward(in, c1)[0];
      double q2 = p.critic2.forward(in, c2)[0];
      critic_loss += (q1 - target) * (q1 - target) + (q2 - target) * (q2 - target);
      std::vector<double> dq1{2.0 * (q1 - target) / B};
      std::vector<double> dq2{2.0 * (q2 - target) / B};
      p.critic1.backward(c1, dq1, g_c1);
      p.critic2.backward(c2, dq2, g_c2);
    }
    if (!std::isfinite(critic_loss))
      throw std::runtime_error("train_policy: critic diverged at step " + std::to_string(step));
    optimizer_step(p.critic1.params(), g_c1, critic1_opt, cfg.lr);
    optimizer_step(p.critic2.params(), g_c2, critic2_opt, cfg.lr);

    // delayed actor and target updates
    if (step % cfg.policy_delay == 0) {
      std::fill(g_actor.begin(), g_actor.end(), 0.0);
      // lambda = alpha / mean |Q1(s, pi(s))| over the batch, treated as constant
      std::vector<Mlp::Cache> actor_caches(B);
      std::vector<Mlp::Cache> critic_caches(B);
      std::vector<std::vector<double>> pre(B), act(B);
      double mean_abs_q = 0.0;
      for (int b = 0; b < B; ++b) {
        pre[b] = p.actor.forward(norm_s[batch[b]], actor_caches[b]);
        squash(pre[b], p.action_low, p.action_high, act[b]);
        std::vector<double> in = norm_s[batch[b]];
        in.insert(in.end(), act[b].begin(), act[b].end());
        mean_abs_q += std::abs(p.critic1.forward(in, critic_caches[b])[0]);
      }
      mean_abs_q /= B;
      const double lambda = cfg.alpha_bc / std::max(mean_abs_q, 1e-12);
      for (int b = 0; b < B; ++b) {
        const Transition& tr = transitions[batch[b]];
        // dLoss/dQ = -lambda / B; propagate through critic1 to the action input
        std::vector<double> dq{-lambda / B};
        std::vector<double> din;
        p.critic1.backward(critic_caches[b], dq, g_c1, &din);  // g_c1 discarded below
        std::vector<double> da(d_a);
        for (int i = 0; i < d_a; ++i) da[i] = din[size_t(d_s) + i];
        // BC term: mean over batch and action dims of (a - a_data)^2
        for (int i = 0; i < d_a; ++i)
          da[i] += 2.0 * (act[b][i] - tr.step->action[i]) / (double(B) * d_a);
        // through the tanh squash
        std::vector<double> dpre(d_a);
        for (int i = 0; i < d_a; ++i) {
          const double half = 0.5 * (p.action_high[i] - p.action_low[i]);
          const double th = std::tanh(pre[b][i]);
          dpre[i] = da[i] * half * (1.0 - th * th);
        }
        p.actor.backward(actor_caches[b], dpre, g_actor);
      }
      std::fill(g_c1.begin(), g_c1.end(), 0.0);  // scratch used for input grads only
      optimizer_step(p.actor.params(), g_actor, actor_opt, cfg.lr);

      auto polyak = [&](Mlp& target, const Mlp& online) {
        auto& tp = target.params();
        const auto& op = online.params();
        for (size_t i = 0; i < tp.size(); ++i) tp[i] += cfg.tau * (op[i] - tp[i]);
      };
      polyak(actor_t, p.actor);
      polyak(critic1_t, p.critic1);
      polyak(critic2_t, p.critic2);
    }

    if (checkpoint && checkpoint_every > 0 && (step + 1) % checkpoint_every == 0)
      checkpoint(step + 1, p);
  }
  return p;
}

double evaluate_actor(const EnvSpec& env,
                      const std::function<std::vector<double>(const std::vector<double>&)>& actor,
                      int episodes, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_actor: episodes must be >= 1");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Rng rng = derive_rng(seed, "eval", uint64_t(e));
    Trajectory tr = rollout_episode(
        env, [&](const std::vector<double>& s, Rng&) { return actor(s); }, rng);
    for (const auto& s : tr.steps) total += s.reward;
  }
  return total / double(episodes);
}

double evaluate_policy(const EnvSpec& env, const Policy& policy, int episodes, uint64_t seed) {
  return evaluate_actor(
      env, [&](const std::vector<double>& s) { return policy.act(s); }, episodes, seed);
}

double normalized_score(double mean_return, const EnvSpec& env) {
  const double span = env.j_expert - env.j_random;
  if (std::abs(span) < 1e-12)
    throw std::invalid_argument("normalized_score: degenerate reference returns");
  return 100.0 * (mean_return - env.j_random) / span;
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

void save_policy(const Policy& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json layout = json::array();
  size_t offset = 0;
  auto add = [&](const char* name, const Mlp& m) {
    layout.push_back({{"name", name},
                      {"offset", offset},
                      {"size", m.params().size()},
                      {"sizes", m.sizes()}});
    offset += m.params().size();
  };
  add("actor", p.actor);
  add("critic1", p.critic1);
  add("critic2", p.critic2);
  json meta{{"format_version", 1},
            {"config", agent_cfg_to_json(p.cfg)},
            {"statistics", stats_to_json(p.stats)},
            {"action_low", p.action_low},
            {"action_high", p.action_high},
            {"layout", layout}};
  std::ofstream mf(dir / "policy.json");
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("save_policy: cannot write policy.json");
  std::ofstream wf(dir / "weights.bin", std::ios::binary);
  for (const Mlp* m : {&p.actor, &p.critic1, &p.critic2})
    wf.write(reinterpret_cast<const char*>(m->params().data()),
             std::streamsize(m->params().size() * sizeof(double)));
  if (!wf) throw std::runtime_error("save_policy: cannot write weights.bin");
}

Policy load_policy(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "policy.json");
  if (!mf) throw std::runtime_error("load_policy: missing policy.json in " + dir.string());
  json meta;
  mf >> meta;
  if (meta.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_policy: unsupported format_version");
  Policy p;
  p.cfg = agent_cfg_from_json(meta.at("config"));
  p.stats = stats_from_json(meta.at("statistics"));
  p.action_low = meta.at("action_low").get<std::vector<double>>();
  p.action_high = meta.at("action_high").get<std::vector<double>>();
  std::vector<Mlp*> nets{&p.actor, &p.critic1, &p.critic2};
  const json& layout = meta.at("layout");
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw std::runtime_error("load_policy: missing weights.bin");
  for (size_t i = 0; i < nets.size(); ++i) {
    *nets[i] = Mlp(layout.at(i).at("sizes").get<std::vector<int>>());
    if (layout.at(i).at("size").get<size_t>() != nets[i]->params().size())
      throw std::runtime_error("load_policy: layout does not match sizes");
    wf.read(reinterpret_cast<char*>(nets[i]->params().data()),
            std::streamsize(nets[i]->params().size() * sizeof(double)));
  }
  if (!wf) throw std::runtime_error("load_policy: short read on weights.bin");
  return p;
}

}  // namespace otto
