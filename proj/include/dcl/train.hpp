#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/exact.hpp"
#include "dcl/model.hpp"
#include "dcl/policy.hpp"
#include "dcl/rng.hpp"
#include "dcl/sampling.hpp"

namespace dcl {

using CriticKey = std::vector<std::int64_t>;

/// Tabular centralized critic V(key); unseen keys read as 0.
struct CriticTable {
  CriticKind kind = CriticKind::S;
  std::size_t truncation = 1;  // joint-history steps kept in H / HS keys
  double learning_rate = 0.1;
  bool timed = false;  // S keys include the timestep
  std::map<CriticKey, double> values;

  double value(const CriticKey& k) const {
    auto it = values.find(k);
    return it == values.end() ? 0.0 : it->second;
  }
};

/// Builds the critic key for a timestep from the (untruncated) joint history and state.
inline CriticKey critic_key(const CriticTable& c, int t, const JointHistory& h, StateIndex s) {
  CriticKey k;
  if (c.kind == CriticKind::S) {
    if (c.timed) k.push_back(t);
    k.push_back(static_cast<std::int64_t>(s));
    return k;
  }
  const std::size_t keep = std::min(c.truncation, h.size());
  for (std::size_t i = h.size() - keep; i < h.size(); ++i) {
    k.push_back(static_cast<std::int64_t>(h[i].action));
    k.push_back(static_cast<std::int64_t>(h[i].observation));
  }
  if (c.kind == CriticKind::HS) k.push_back(static_cast<std::int64_t>(s));
  return k;
}

/// One environment step as seen by the critic.
struct TransitionData {
  CriticKey current;
  CriticKey next;
  double reward = 0.0;
  bool terminal = false;  // no successor value
};

/// One-step advantage r + gamma V(next) - V(current).
inline double advantage(const CriticTable& c, const TransitionData& d, double discount) {
  const double next = d.terminal ? 0.0 : c.value(d.next);
  return d.reward + discount * next - c.value(d.current);
}

/// TD(0): V(current) += lr * (r + gamma V(next) - V(current)).
inline void critic_update(CriticTable& c, const TransitionData& d, double discount) {
  const double delta = advantage(c, d, discount);
  c.values[d.current] += c.learning_rate * delta;
}

/// Per-agent softmax actors over truncated individual histories.
struct ActorParams {
  TabularJointPolicy policy;
  std::size_t truncation = 1;
  double learning_rate = 0.1;
  double entropy = 0.01;

  std::size_t parameter_count(const DecPomdpModel& m) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.num_agents(); ++i)
      n += all_keys(m, i, policy.agents[i].view()).size() * m.actions[i].size();
    return n;
  }
};

inline ActorParams make_actor(const DecPomdpModel& m, std::size_t truncation, double lr, double entropy) {
  ActorParams a;
  a.policy = uniform_policy(m, HistoryView::last_steps(truncation), Parameterization::softmax);
  a.truncation = truncation;
  a.learning_rate = lr;
  a.entropy = entropy;
  return a;
}

/// theta(key) += lr * (advantage * grad log pi(action) + entropy * grad H(pi)).
inline void actor_update(ActorParams& actor, std::size_t agent, const HistoryKey& key,
                         std::size_t action, double adv, double lr) {
  auto& ag = actor.policy.agents[agent];
  auto theta = ag.parameters(key);
  const auto pi = softmax(theta);
  double H = 0.0;
  for (double p : pi)
    if (p > 0.0) H -= p * std::log(p);
  for (std::size_t b = 0; b < theta.size(); ++b) {
    const double score = (b == action ? 1.0 : 0.0) - pi[b];
    const double dH = pi[b] > 0.0 ? -pi[b] * (std::log(pi[b]) + H) : 0.0;
    theta[b] += lr * (adv * score + actor.entropy * dH);
  }
  ag.set(key, std::move(theta));
}

struct TrainConfig {
  std::string model = "builtin:dectiger";
  int horizon = 0;                 // 0 keeps the model's horizon
  CriticKind critic = CriticKind::H;
  std::size_t episodes = 100000;
  double actor_lr = 0.01;
  double critic_lr = 0.1;
  double discount = -1.0;          // < 0 keeps the model's discount
  std::size_t actor_truncation = 0;   // 0 means the horizon
  std::size_t critic_truncation = 0;  // 0 means the horizon
  bool critic_timed = false;
  double entropy = 0.01;
  std::size_t eval_interval = 1000;
  std::size_t eval_episodes = 1000;
  std::uint64_t seed = 1;
};

/// Reads `key = value` lines (names as in TrainConfig; `#` comments).
inline TrainConfig parse_train_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) eq = line.find(':');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(ln) + ": expected key = value");
    const auto key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    auto num = [&] {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(val, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != val.size()) throw Error("config line " + std::to_string(ln) + ": '" + key + "' needs a number");
      return v;
    };
    auto count = [&] {
      const double v = num();
      if (v < 0 || v != std::floor(v)) throw Error("config line " + std::to_string(ln) + ": '" + key + "' needs a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "model") cfg.model = val;
    else if (key == "horizon") cfg.horizon = static_cast<int>(count());
    else if (key == "critic") cfg.critic = parse_critic_kind(val);
    else if (key == "episodes") cfg.episodes = count();
    else if (key == "actor_lr") cfg.actor_lr = num();
    else if (key == "critic_lr") cfg.critic_lr = num();
    else if (key == "discount") cfg.discount = num();
    else if (key == "actor_truncation") cfg.actor_truncation = count();
    else if (key == "critic_truncation") cfg.critic_truncation = count();
    else if (key == "critic_timed") cfg.critic_timed = val == "true" || val == "1";
    else if (key == "entropy") cfg.entropy = num();
    else if (key == "eval_interval") cfg.eval_interval = count();
    else if (key == "eval_episodes") cfg.eval_episodes = count();
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(count());
    else throw Error("config line " + std::to_string(ln) + ": unknown key '" + key + "'");
  }
  return cfg;
}

inline void check_config(const TrainConfig& c) {
  if (c.episodes == 0) throw PreconditionError("episodes must be positive");
  if (!(c.actor_lr > 0.0) || !(c.critic_lr > 0.0)) throw PreconditionError("learning rates must be positive");
  if (c.eval_interval == 0 || c.eval_episodes == 0) throw PreconditionError("evaluation counts must be positive");
  if (c.entropy < 0.0) throw PreconditionError("entropy coefficient must be non-negative");
}

struct CurveRow {
  std::size_t episode;
  double mean_return;
  double std_return;
  double seconds;
};

struct LearningCurve {
  std::vector<CurveRow> rows;
};

inline void write_curve_csv(std::ostream& os, const LearningCurve& c) {
  os << "episode,mean_return,std_return,seconds\n";
  char buf[128];
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.6f\n", r.episode, r.mean_return, r.std_return, r.seconds);
    os << buf;
  }
}

struct ReturnEstimate {
  double mean = 0.0;
  double std = 0.0;
};

/// Monte-Carlo estimate of J from seed-deterministic rollouts.
inline ReturnEstimate evaluate_policy(const DecPomdpModel& m, const TabularJointPolicy& p,
                                      std::size_t episodes, Rng& rng) {
  const auto absorbing = absorbing_states(m);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t k = 0; k < episodes; ++k) {
    const double g = rollout(m, p, rng, absorbing).discounted_return;
    sum += g;
    sum2 += g * g;
  }
  const double n = static_cast<double>(episodes);
  ReturnEstimate r;
  r.mean = sum / n;
  r.std = episodes > 1 ? std::sqrt(std::max(0.0, (sum2 - n * r.mean * r.mean) / (n - 1.0))) : 0.0;
  return r;
}

inline ReturnEstimate evaluate_policy(const DecPomdpModel& m, const TabularJointPolicy& p,
                                      std::size_t episodes, std::uint64_t seed) {
  Rng rng(seed);
  return evaluate_policy(m, p, episodes, rng);
}

/// Exact J by enumeration.
inline double evaluate_policy_exact(const DecPomdpModel& m, const TabularJointPolicy& p) {
  return expected_return(m, p);
}

struct TrainResult {
  ActorParams actor;
  CriticTable critic;
  LearningCurve curve;
};

/// Applies the config's horizon/discount overrides.
inline DecPomdpModel configured_model(DecPomdpModel m, const TrainConfig& c) {
  if (c.horizon > 0) m.horizon = c.horizon;
  if (c.discount >= 0.0) m.discount = c.discount;
  return m;
}

/// On-policy advantage actor-critic. Each step computes the TD error once from the current
/// critic, updates the critic, then moves every agent's actor along delta * grad log pi.
inline TrainResult train(const DecPomdpModel& model, const TrainConfig& cfg) {
  check_config(cfg);
  const DecPomdpModel m = configured_model(model, cfg);
  if (auto rep = validate(m); !rep.empty()) throw PreconditionError("model is invalid: " + rep.front().message);
  const auto H = static_cast<std::size_t>(m.horizon);
  TrainResult out;
  out.actor = make_actor(m, cfg.actor_truncation ? cfg.actor_truncation : H, cfg.actor_lr, cfg.entropy);
  out.critic.kind = cfg.critic;
  out.critic.truncation = cfg.critic_truncation ? cfg.critic_truncation : H;
  out.critic.learning_rate = cfg.critic_lr;
  out.critic.timed = cfg.critic_timed;

  const auto absorbing = absorbing_states(m);
  const auto ar = m.action_radix();
  const auto orx = m.observation_radix();
  const auto S = m.num_states(), O = m.num_joint_observations();
  const Rng root(cfg.seed);
  Rng rng = root.split(0);
  Rng eval_rng = root.split(1);
  const auto start = std::chrono::steady_clock::now();
  auto& actor = out.actor;
  auto& critic = out.critic;
  const auto n_agents = m.num_agents();

  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    StateIndex s = rng.categorical(m.initial);
    JointHistory h;
    std::vector<HistoryKey> keys(n_agents);
    for (int t = 0; t < m.horizon && !absorbing[s]; ++t) {
      std::vector<std::size_t> parts(n_agents);
      for (std::size_t i = 0; i < n_agents; ++i)
        parts[i] = rng.categorical(actor.policy.agents[i].distribution(keys[i]));
      const auto a = ar.encode(parts);
      const StateIndex next = rng.categorical(std::span<const double>(m.transition).subspan(m.transition_offset(s, a), S));
      const auto o = rng.categorical(std::span<const double>(m.observation).subspan(m.observation_offset(a, next), O));
      TransitionData d;
      d.reward = m.R(s, a, next);
      d.terminal = absorbing[next] || t + 1 == m.horizon;
      d.current = critic_key(critic, t, h, s);
      h.push_back({a, o});
      if (!d.terminal) d.next = critic_key(critic, t + 1, h, next);
      const double delta = advantage(critic, d, m.discount);
      critic.values[d.current] += critic.learning_rate * delta;
      if (!std::isfinite(critic.values[d.current]))
        throw DivergenceError("critic value became non-finite in episode " + std::to_string(ep), ep);
      for (std::size_t i = 0; i < n_agents; ++i) {
        actor_update(actor, i, keys[i], parts[i], delta, actor.learning_rate);
        for (double v : actor.policy.agents[i].parameters(keys[i]))
          if (!std::isfinite(v))
            throw DivergenceError("actor parameter became non-finite in episode " + std::to_string(ep), ep);
      }
      const auto op = orx.decode(o);
      for (std::size_t i = 0; i < n_agents; ++i)
        keys[i] = extend_key(actor.policy.agents[i].view(), keys[i], parts[i], op[i]);
      s = next;
    }
    if (ep % cfg.eval_interval == 0 || ep == cfg.episodes) {
      const auto est = evaluate_policy(m, actor.policy, cfg.eval_episodes, eval_rng);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out.curve.rows.push_back({ep, est.mean, est.std, secs});
    }
  }
  return out;
}

}  // namespace dcl
