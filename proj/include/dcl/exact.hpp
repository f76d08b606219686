#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/model.hpp"
#include "dcl/policy.hpp"

namespace dcl {

/// Critic kinds: joint history, state, or (joint history, state).
enum class CriticKind { H, S, HS };

inline std::string to_string(CriticKind k) {
  switch (k) {
    case CriticKind::H: return "H";
    case CriticKind::S: return "S";
    case CriticKind::HS: return "HS";
  }
  return "H";
}

inline CriticKind parse_critic_kind(const std::string& s) {
  if (s == "H" || s == "h" || s == "history") return CriticKind::H;
  if (s == "S" || s == "s" || s == "state") return CriticKind::S;
  if (s == "HS" || s == "hs" || s == "history-state") return CriticKind::HS;
  throw Error("unknown critic kind '" + s + "' (expected H, S or HS)");
}

/// What Q(h,s,a) measures.
///   to_go:   expected discounted reward from the current step on.
///   episode: expected discounted return of the whole episode, i.e. the rewards already
///            collected along h plus gamma^t times the reward to go.
enum class ReturnConvention { to_go, episode };

/// Whether state values Q(s,a) are averaged over all timesteps (plain) or kept per
/// timestep (timed). In a finite-horizon problem the timed form is the Markov one.
enum class StateValueKeying { timed, plain };

inline std::string to_string(ReturnConvention r) { return r == ReturnConvention::to_go ? "to-go" : "episode"; }
inline std::string to_string(StateValueKeying k) { return k == StateValueKeying::timed ? "timed" : "plain"; }

struct ExactOptions {
  ReturnConvention returns = ReturnConvention::to_go;
  StateValueKeying state_keys = StateValueKeying::timed;
  /// Cap on reachable (history, state) entries.
  std::size_t max_entries = 5'000'000;
  /// Merge joint histories that no reported quantity can tell apart (same policy keys,
  /// same belief, same past return). Only bounded-memory policies are affected.
  bool merge_histories = true;
};

namespace detail {

struct VectorHash {
  template <class T>
  std::size_t operator()(const std::vector<T>& v) const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto x : v) {
      h ^= static_cast<std::uint64_t>(x);
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

inline void check_policy_shape(const DecPomdpModel& m, const TabularJointPolicy& p) {
  if (p.agents.size() != m.num_agents())
    throw PreconditionError("policy has " + std::to_string(p.agents.size()) +
                            " agents, model has " + std::to_string(m.num_agents()));
  for (std::size_t i = 0; i < m.num_agents(); ++i)
    if (p.agents[i].num_actions() != m.actions[i].size())
      throw PreconditionError("policy for agent " + std::to_string(i) +
                              " has the wrong number of actions");
}

}  // namespace detail

/// Interned per-agent history keys, action distributions and joint action distributions.
class PolicyIndex {
 public:
  using JointDistribution = std::vector<std::pair<JointActionIndex, double>>;

  PolicyIndex() = default;
  PolicyIndex(const DecPomdpModel& m, const TabularJointPolicy& p)
      : policy_(p), action_radix_(m.action_radix()), observation_radix_(m.observation_radix()) {
    detail::check_policy_shape(m, p);
    agents_.resize(m.num_agents());
    for (std::size_t i = 0; i < m.num_agents(); ++i) {
      agents_[i].num_observations = m.observations[i].size();
      agents_[i].num_actions = m.actions[i].size();
      intern(i, HistoryKey{});
    }
  }

  std::size_t num_agents() const { return agents_.size(); }
  const TabularJointPolicy& policy() const { return policy_; }
  const Radix& action_radix() const { return action_radix_; }
  const Radix& observation_radix() const { return observation_radix_; }

  std::uint32_t intern(std::size_t agent, const HistoryKey& key) {
    auto& a = agents_[agent];
    auto [it, inserted] = a.ids.try_emplace(key, static_cast<std::uint32_t>(a.keys.size()));
    if (inserted) a.keys.push_back(key);
    return it->second;
  }

  std::uint32_t extend(std::size_t agent, std::uint32_t id, std::size_t action,
                       std::size_t observation) {
    auto& a = agents_[agent];
    const std::uint64_t code =
        (static_cast<std::uint64_t>(id) * a.num_actions + action) * a.num_observations + observation;
    if (auto it = a.extensions.find(code); it != a.extensions.end()) return it->second;
    const auto next = intern(agent, extend_key(policy_.agents[agent].view(), a.keys[id], action, observation));
    agents_[agent].extensions.emplace(code, next);
    return next;
  }

  const HistoryKey& key(std::size_t agent, std::uint32_t id) const { return agents_[agent].keys[id]; }
  std::size_t num_keys(std::size_t agent) const { return agents_[agent].keys.size(); }

  /// Agent's action distribution at an interned key; checked to be a distribution.
  const std::vector<double>& distribution(std::size_t agent, std::uint32_t id) {
    auto& a = agents_[agent];
    if (a.dists.size() <= id) a.dists.resize(a.keys.size());
    auto& d = a.dists[id];
    if (d.empty()) {
      d = policy_.agents[agent].distribution(a.keys[id]);
      double sum = 0.0;
      for (double p : d) {
        if (!(p >= 0.0)) throw PreconditionError("policy has a negative or NaN probability for agent " + std::to_string(agent));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw PreconditionError("policy distribution for agent " + std::to_string(agent) +
                                " does not sum to 1");
    }
    return d;
  }

  /// Joint action distribution (product of the agents' distributions), zero entries dropped.
  const JointDistribution& joint(const std::vector<std::uint32_t>& ids) {
    if (auto it = joint_cache_.find(ids); it != joint_cache_.end()) return it->second;
    JointDistribution out{{0, 1.0}};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& d = distribution(i, ids[i]);
      JointDistribution next;
      for (auto [a, p] : out)
        for (std::size_t b = 0; b < d.size(); ++b)
          if (d[b] > 0.0) next.emplace_back(a * d.size() + b, p * d[b]);
      out = std::move(next);
    }
    return joint_cache_.emplace(ids, std::move(out)).first->second;
  }

 private:
  struct AgentKeys {
    std::size_t num_actions = 0, num_observations = 0;
    std::vector<HistoryKey> keys;
    std::map<HistoryKey, std::uint32_t> ids;
    std::unordered_map<std::uint64_t, std::uint32_t> extensions;
    std::vector<std::vector<double>> dists;
  };
  TabularJointPolicy policy_;
  Radix action_radix_, observation_radix_;
  std::vector<AgentKeys> agents_;
  std::unordered_map<std::vector<std::uint32_t>, JointDistribution, detail::VectorHash> joint_cache_;
};

/// One step of a joint history.
struct JointStep {
  JointActionIndex action;
  JointObservationIndex observation;
  auto operator<=>(const JointStep&) const = default;
};

using JointHistory = std::vector<JointStep>;

/// A class of reachable joint histories at one timestep. Without merging (or for full-memory
/// policies) every class holds exactly one joint history.
struct HistoryNode {
  int t = 0;
  std::vector<std::uint32_t> keys;  // per-agent interned policy keys
  std::size_t parent = SIZE_MAX;    // representative path
  JointActionIndex action = 0;
  JointObservationIndex observation = 0;
  double multiplicity = 1.0;  // number of joint histories in the class
  std::size_t entry_begin = 0, entry_count = 0;
  std::vector<std::pair<std::uint64_t, std::size_t>> children;  // (a * |O| + o) -> node, sorted
};

/// Reachable (history, state) support with Pr_t(h,s).
struct Enumeration {
  ExactOptions options;
  int horizon = 1;
  double discount = 1.0;
  std::size_t num_states = 0, num_joint_actions = 0, num_joint_observations = 0;
  std::vector<HistoryNode> nodes;
  std::vector<std::size_t> layer_begin;  // nodes of timestep t are [layer_begin[t], layer_begin[t+1])
  std::vector<StateIndex> entry_state;
  std::vector<double> entry_probability;  // Pr_t(h,s)
  std::vector<double> entry_past;         // expected discounted reward collected before t
  std::vector<double> terminated;         // mass absorbed at or before t
  PolicyIndex index;

  std::size_t num_entries() const { return entry_state.size(); }
  std::size_t layer_end(int t) const { return layer_begin[static_cast<std::size_t>(t) + 1]; }

  std::optional<std::size_t> child(std::size_t node, JointActionIndex a,
                                   JointObservationIndex o) const {
    const std::uint64_t code = static_cast<std::uint64_t>(a) * num_joint_observations + o;
    const auto& ch = nodes[node].children;
    auto it = std::lower_bound(ch.begin(), ch.end(), std::make_pair(code, std::size_t{0}));
    if (it == ch.end() || it->first != code) return std::nullopt;
    return it->second;
  }

  /// Node reached by a joint history, if it has positive probability.
  std::optional<std::size_t> find(const JointHistory& h) const {
    std::size_t n = 0;
    for (const auto& st : h) {
      auto c = child(n, st.action, st.observation);
      if (!c) return std::nullopt;
      n = *c;
    }
    return n;
  }

  /// Representative joint history of a node.
  JointHistory history(std::size_t node) const {
    JointHistory out;
    while (nodes[node].parent != SIZE_MAX) {
      out.push_back({nodes[node].action, nodes[node].observation});
      node = nodes[node].parent;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }
};

inline Enumeration enumerate(const DecPomdpModel& m, const TabularJointPolicy& p,
                             const ExactOptions& opt = {}) {
  Enumeration en;
  en.options = opt;
  en.horizon = m.horizon;
  en.discount = m.discount;
  en.num_states = m.num_states();
  en.num_joint_actions = m.num_joint_actions();
  en.num_joint_observations = m.num_joint_observations();
  en.index = PolicyIndex(m, p);
  const SparseDynamics dyn(m);
  const auto S = en.num_states;
  const auto O = en.num_joint_observations;
  const auto n_agents = m.num_agents();
  const bool episode = opt.returns == ReturnConvention::episode;
  const auto ar = m.action_radix();
  const auto orx = m.observation_radix();
  en.terminated.assign(static_cast<std::size_t>(m.horizon), 0.0);

  auto check_cap = [&] {
    if (en.entry_state.size() > opt.max_entries)
      throw ResourceError("reachable (history, state) entries exceed the cap of " +
                          std::to_string(opt.max_entries));
  };

  HistoryNode root;
  root.keys.assign(n_agents, 0);
  for (StateIndex s = 0; s < S; ++s) {
    if (m.initial[s] <= 0.0) continue;
    if (dyn.absorbing(s)) {
      en.terminated[0] += m.initial[s];
      continue;
    }
    en.entry_state.push_back(s);
    en.entry_probability.push_back(m.initial[s]);
    en.entry_past.push_back(0.0);
  }
  root.entry_count = en.entry_state.size();
  en.nodes.push_back(root);
  en.layer_begin = {0, 1};

  struct Candidate {
    std::vector<double> mass, past;
  };

  double discount_t = 1.0;
  for (int t = 0; t + 1 < m.horizon; ++t, discount_t *= m.discount) {
    std::unordered_map<std::vector<std::uint64_t>, std::size_t, detail::VectorHash> merged;
    const auto begin = en.layer_begin[static_cast<std::size_t>(t)];
    const auto end = en.layer_begin[static_cast<std::size_t>(t) + 1];
    double absorbed = 0.0;
    for (std::size_t n = begin; n < end; ++n) {
      const auto keys = en.nodes[n].keys;
      const auto joint = en.index.joint(keys);  // copy: the cache may grow below
      for (auto [a, pa] : joint) {
        std::map<JointObservationIndex, Candidate> cands;
        const auto& node = en.nodes[n];
        for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e) {
          const StateIndex s = en.entry_state[e];
          const double ps = en.entry_probability[e] * pa;
          for (auto [next, pt] : dyn.successors(s, a)) {
            const double mass = ps * pt;
            if (dyn.absorbing(next)) {
              absorbed += mass;
              continue;
            }
            const double ret = en.entry_past[e] + discount_t * m.R(s, a, next);
            for (auto [o, po] : dyn.emissions(a, next)) {
              auto& c = cands[o];
              if (c.mass.empty()) c.mass.assign(S, 0.0), c.past.assign(S, 0.0);
              c.mass[next] += mass * po;
              if (episode) c.past[next] += mass * po * ret;
            }
          }
        }
        const auto a_parts = ar.decode(a);
        for (auto& [o, c] : cands) {
          double total = 0.0;
          for (double v : c.mass) total += v;
          if (!(total > 0.0)) continue;
          const auto o_parts = orx.decode(o);
          std::vector<std::uint32_t> child_keys(n_agents);
          for (std::size_t i = 0; i < n_agents; ++i)
            child_keys[i] = en.index.extend(i, keys[i], a_parts[i], o_parts[i]);

          std::vector<std::uint64_t> mkey;
          if (opt.merge_histories) {
            mkey.assign(child_keys.begin(), child_keys.end());
            for (StateIndex s = 0; s < S; ++s) {
              if (!(c.mass[s] > 0.0)) continue;
              mkey.push_back(s);
              mkey.push_back(std::bit_cast<std::uint64_t>(c.mass[s] / total));
              if (episode) mkey.push_back(std::bit_cast<std::uint64_t>(c.past[s] / c.mass[s]));
            }
          }
          std::size_t target;
          if (auto it = opt.merge_histories ? merged.find(mkey) : merged.end(); it != merged.end()) {
            target = it->second;
            auto& tn = en.nodes[target];
            std::size_t e = tn.entry_begin;
            for (StateIndex s = 0; s < S; ++s)
              if (c.mass[s] > 0.0) en.entry_probability[e++] += c.mass[s];
            tn.multiplicity += en.nodes[n].multiplicity;
          } else {
            HistoryNode child;
            child.t = t + 1;
            child.keys = child_keys;
            child.parent = n;
            child.action = a;
            child.observation = o;
            child.multiplicity = en.nodes[n].multiplicity;
            child.entry_begin = en.entry_state.size();
            for (StateIndex s = 0; s < S; ++s) {
              if (!(c.mass[s] > 0.0)) continue;
              en.entry_state.push_back(s);
              en.entry_probability.push_back(c.mass[s]);
              en.entry_past.push_back(episode ? c.past[s] / c.mass[s] : 0.0);
            }
            child.entry_count = en.entry_state.size() - child.entry_begin;
            check_cap();
            target = en.nodes.size();
            en.nodes.push_back(std::move(child));
            if (opt.merge_histories) merged.emplace(std::move(mkey), target);
          }
          en.nodes[n].children.emplace_back(static_cast<std::uint64_t>(a) * O + o, target);
        }
      }
      std::sort(en.nodes[n].children.begin(), en.nodes[n].children.end());
    }
    en.terminated[static_cast<std::size_t>(t) + 1] = en.terminated[static_cast<std::size_t>(t)] + absorbed;
    en.layer_begin.push_back(en.nodes.size());
  }
  return en;
}

/// eta, rho and their marginals/conditionals. Per-entry arrays align with the enumeration.
struct VisitationTable {
  double total_eta = 0.0;              // sum of eta; grad J = total_eta * E_rho[...]
  std::vector<double> eta;             // per entry
  std::vector<double> rho;             // per entry
  std::vector<double> rho_h;           // per node
  std::vector<double> rho_s_given_h;   // per entry
  std::vector<double> rho_h_given_s;   // per entry, conditioned on the entry's state key
  std::vector<std::size_t> state_key;  // per entry: s, or t * |S| + s when timed
  std::vector<double> rho_state_key;   // per state key
  std::vector<double> rho_s;           // per plain state
  std::size_t num_state_keys = 0;
};

inline std::size_t state_key_of(const Enumeration& en, int t, StateIndex s) {
  return en.options.state_keys == StateValueKeying::timed
             ? static_cast<std::size_t>(t) * en.num_states + s
             : s;
}

inline VisitationTable visitation(const Enumeration& en) {
  VisitationTable v;
  const auto E = en.num_entries();
  v.eta.resize(E);
  v.rho.resize(E);
  v.rho_s_given_h.resize(E);
  v.rho_h_given_s.resize(E);
  v.state_key.resize(E);
  v.rho_h.assign(en.nodes.size(), 0.0);
  v.num_state_keys = en.options.state_keys == StateValueKeying::timed
                         ? en.num_states * static_cast<std::size_t>(en.horizon)
                         : en.num_states;
  v.rho_state_key.assign(v.num_state_keys, 0.0);
  v.rho_s.assign(en.num_states, 0.0);

  // Visit weight per timestep: gamma^t for rewards-to-go, 1 for whole-episode returns.
  const bool discounted = en.options.returns == ReturnConvention::to_go;
  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& node = en.nodes[n];
    const double w = discounted ? std::pow(en.discount, node.t) : 1.0;
    for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e) {
      v.eta[e] = w * en.entry_probability[e];
      v.total_eta += v.eta[e];
      v.state_key[e] = state_key_of(en, node.t, en.entry_state[e]);
    }
  }
  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& node = en.nodes[n];
    for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e) {
      v.rho[e] = v.eta[e] / v.total_eta;
      v.rho_h[n] += v.rho[e];
      v.rho_state_key[v.state_key[e]] += v.rho[e];
      v.rho_s[en.entry_state[e]] += v.rho[e];
    }
    for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e)
      v.rho_s_given_h[e] = v.rho[e] / v.rho_h[n];
  }
  for (std::size_t e = 0; e < E; ++e) v.rho_h_given_s[e] = v.rho[e] / v.rho_state_key[v.state_key[e]];
  return v;
}

/// Q tables for one policy. Per-entry/per-node arrays are flattened with the joint action
/// as the fastest index.
struct ValueTables {
  std::size_t num_joint_actions = 0;
  std::vector<double> q_hsa;     // [entry][a]
  std::vector<double> q_ha;      // [node][a]
  std::vector<double> q_sa;      // [state key][a]; zero where the key is never visited
  std::vector<double> e_s_q_sa;  // [node][a]  E_{s ~ rho(s|h)} Q(s,a)
  double expected_return = 0.0;  // J

  double hsa(std::size_t entry, JointActionIndex a) const { return q_hsa[entry * num_joint_actions + a]; }
  double ha(std::size_t node, JointActionIndex a) const { return q_ha[node * num_joint_actions + a]; }
  double sa(std::size_t key, JointActionIndex a) const { return q_sa[key * num_joint_actions + a]; }
  double es_sa(std::size_t node, JointActionIndex a) const { return e_s_q_sa[node * num_joint_actions + a]; }
};

namespace detail {

/// Memoized reward-to-go Q_F(t, keys, s, .) for every joint action, on or off policy.
class ToGoEvaluator {
 public:
  ToGoEvaluator(const DecPomdpModel& m, PolicyIndex index)
      : m_(m), dyn_(m), index_(std::move(index)), ar_(m.action_radix()), or_(m.observation_radix()) {}

  const std::vector<double>& operator()(int t, const std::vector<std::uint32_t>& keys, StateIndex s) {
    std::vector<std::uint32_t> memo_key;
    memo_key.reserve(keys.size() + 2);
    memo_key.push_back(static_cast<std::uint32_t>(t));
    memo_key.insert(memo_key.end(), keys.begin(), keys.end());
    memo_key.push_back(static_cast<std::uint32_t>(s));
    if (auto it = memo_.find(memo_key); it != memo_.end()) return it->second;

    const auto A = m_.num_joint_actions();
    std::vector<double> q(A, 0.0);
    const bool last = t + 1 >= m_.horizon;
    for (JointActionIndex a = 0; a < A; ++a) {
      const auto a_parts = ar_.decode(a);
      double total = 0.0;
      for (auto [next, pt] : dyn_.successors(s, a)) {
        double v = m_.R(s, a, next);
        if (!last && !dyn_.absorbing(next)) {
          double cont = 0.0;
          for (auto [o, po] : dyn_.emissions(a, next)) {
            const auto o_parts = or_.decode(o);
            std::vector<std::uint32_t> child(keys.size());
            for (std::size_t i = 0; i < keys.size(); ++i)
              child[i] = index_.extend(i, keys[i], a_parts[i], o_parts[i]);
            const auto joint = index_.joint(child);
            const auto& qn = (*this)(t + 1, child, next);
            double exp = 0.0;
            for (auto [b, pb] : joint) exp += pb * qn[b];
            cont += po * exp;
          }
          v += m_.discount * cont;
        }
        total += pt * v;
      }
      q[a] = total;
    }
    return memo_.emplace(std::move(memo_key), std::move(q)).first->second;
  }

  PolicyIndex& index() { return index_; }

 private:
  const DecPomdpModel& m_;
  SparseDynamics dyn_;
  PolicyIndex index_;
  Radix ar_, or_;
  std::unordered_map<std::vector<std::uint32_t>, std::vector<double>, VectorHash> memo_;
};

}  // namespace detail

inline ValueTables values(const DecPomdpModel& m, const Enumeration& en, const VisitationTable& vis) {
  ValueTables vt;
  const auto A = en.num_joint_actions;
  vt.num_joint_actions = A;
  vt.q_hsa.assign(en.num_entries() * A, 0.0);
  vt.q_ha.assign(en.nodes.size() * A, 0.0);
  vt.q_sa.assign(vis.num_state_keys * A, 0.0);
  vt.e_s_q_sa.assign(en.nodes.size() * A, 0.0);
  detail::ToGoEvaluator qf(m, en.index);
  const bool episode = en.options.returns == ReturnConvention::episode;

  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& node = en.nodes[n];
    const double scale = episode ? std::pow(en.discount, node.t) : 1.0;
    for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e) {
      const auto& q = qf(node.t, node.keys, en.entry_state[e]);
      for (JointActionIndex a = 0; a < A; ++a) {
        const double v = episode ? en.entry_past[e] + scale * q[a] : q[a];
        vt.q_hsa[e * A + a] = v;
        vt.q_ha[n * A + a] += vis.rho_s_given_h[e] * v;
        vt.q_sa[vis.state_key[e] * A + a] += vis.rho_h_given_s[e] * v;
      }
    }
  }
  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& node = en.nodes[n];
    for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e)
      for (JointActionIndex a = 0; a < A; ++a)
        vt.e_s_q_sa[n * A + a] += vis.rho_s_given_h[e] * vt.q_sa[vis.state_key[e] * A + a];
  }
  if (!en.nodes.empty()) {
    const auto& root = en.nodes[0];
    const auto& joint = qf.index().joint(root.keys);
    for (std::size_t e = root.entry_begin; e < root.entry_begin + root.entry_count; ++e)
      for (auto [a, pa] : joint) vt.expected_return += en.entry_probability[e] * pa * vt.q_hsa[e * A + a];
  }
  return vt;
}

struct BiasEntry {
  std::size_t node;
  JointActionIndex action;
  double bias;
};

/// bias(h,a) = Q(h,a) - E_{s|h} Q(s,a) over reachable h and on-policy a.
struct BiasReport {
  std::vector<BiasEntry> entries;
  double max_abs_bias = 0.0;
  std::size_t argmax = SIZE_MAX;  // index into entries
};

/// Parameter vector layout: one block of |A_i| entries per (agent, history key).
struct ParameterLayout {
  std::vector<std::vector<HistoryKey>> keys;
  std::vector<std::map<HistoryKey, std::size_t>> block;  // key -> parameter offset
  std::vector<std::size_t> num_actions;
  std::size_t size = 0;

  std::size_t offset(std::size_t agent, const HistoryKey& key) const {
    auto it = block[agent].find(key);
    if (it == block[agent].end()) throw Error("history key outside the parameter layout");
    return it->second;
  }
};

inline ParameterLayout make_layout(const DecPomdpModel& m, const TabularJointPolicy& p,
                                   std::size_t max_keys = 1'000'000) {
  ParameterLayout L;
  for (std::size_t i = 0; i < m.num_agents(); ++i) {
    L.keys.push_back(all_keys(m, i, p.agents[i].view(), max_keys));
    L.num_actions.push_back(m.actions[i].size());
    std::map<HistoryKey, std::size_t> blk;
    for (const auto& k : L.keys.back()) {
      blk.emplace(k, L.size);
      L.size += L.num_actions.back();
    }
    L.block.push_back(std::move(blk));
  }
  return L;
}

struct GradientReport {
  CriticKind kind = CriticKind::H;
  std::vector<double> gradient;  // E_{rho,pi}[W grad log pi]; grad J = normalizer * gradient
  double second_moment = 0.0;    // E[g^T g]
  double variance = 0.0;         // E[g^T g] - |E g|^2
  double normalizer = 1.0;
};

/// Everything the exact module computes for one (model, policy) pair.
struct ExactAnalysis {
  DecPomdpModel model;
  TabularJointPolicy policy;
  Enumeration enumeration;
  VisitationTable visitation;
  ValueTables values;

  /// Joint action distribution at a node.
  const PolicyIndex::JointDistribution& joint_policy(std::size_t node) const {
    return node_policies.at(node);
  }
  std::vector<PolicyIndex::JointDistribution> node_policies;
};

/// Builds visitation and value tables on top of an enumeration.
inline ExactAnalysis complete_analysis(const DecPomdpModel& m, const TabularJointPolicy& p, Enumeration en) {
  ExactAnalysis out;
  out.model = m;
  out.policy = p;
  out.enumeration = std::move(en);
  out.visitation = visitation(out.enumeration);
  out.values = values(m, out.enumeration, out.visitation);
  auto& index = out.enumeration.index;
  out.node_policies.reserve(out.enumeration.nodes.size());
  for (const auto& node : out.enumeration.nodes) out.node_policies.push_back(index.joint(node.keys));
  return out;
}

inline ExactAnalysis analyze(const DecPomdpModel& m, const TabularJointPolicy& p,
                             const ExactOptions& opt = {}) {
  return complete_analysis(m, p, enumerate(m, p, opt));
}

inline BiasReport bias_report(const ExactAnalysis& x) {
  BiasReport r;
  const auto& en = x.enumeration;
  for (std::size_t n = 0; n < en.nodes.size(); ++n)
    for (auto [a, pa] : x.joint_policy(n)) {
      const double b = x.values.ha(n, a) - x.values.es_sa(n, a);
      r.entries.push_back({n, a, b});
      if (std::abs(b) > r.max_abs_bias || r.argmax == SIZE_MAX) {
        r.max_abs_bias = std::max(r.max_abs_bias, std::abs(b));
        r.argmax = r.entries.size() - 1;
      }
    }
  return r;
}

/// Critic weight W(kind) at a (node, entry, action).
inline double critic_weight(const ExactAnalysis& x, CriticKind kind, std::size_t node,
                            std::size_t entry, JointActionIndex a) {
  switch (kind) {
    case CriticKind::H: return x.values.ha(node, a);
    case CriticKind::S: return x.values.sa(x.visitation.state_key[entry], a);
    case CriticKind::HS: return x.values.hsa(entry, a);
  }
  return 0.0;
}

namespace detail {

/// Adds w * grad log pi_i(a_i; key) into g at the key's block; returns |grad log pi_i|^2.
inline double add_score(std::vector<double>& g, std::size_t offset, const std::vector<double>& pi,
                        std::size_t a_i, Parameterization param, double w) {
  if (param == Parameterization::direct) {
    if (!(pi[a_i] > 0.0))
      throw DegenerateScoreError("direct score 1/pi requested where pi = 0");
    g[offset + a_i] += w / pi[a_i];
    return 1.0 / (pi[a_i] * pi[a_i]);
  }
  double sq = 0.0;
  for (std::size_t b = 0; b < pi.size(); ++b) {
    const double s = (b == a_i ? 1.0 : 0.0) - pi[b];
    g[offset + b] += w * s;
    sq += s * s;
  }
  return sq;
}

}  // namespace detail

/// Exact expectation and variance of the single-sample estimator W(kind) * grad log pi
/// under (h,s) ~ rho, a ~ pi(h).
inline GradientReport exact_gradient(const ExactAnalysis& x, CriticKind kind,
                                     const ParameterLayout& layout) {
  GradientReport r;
  r.kind = kind;
  r.gradient.assign(layout.size, 0.0);
  r.normalizer = x.visitation.total_eta;
  const auto& en = x.enumeration;
  const auto param = x.policy.parameterization();
  const auto n_agents = x.model.num_agents();
  const auto ar = x.model.action_radix();
  auto index = en.index;

  std::vector<std::vector<std::size_t>> offsets(n_agents);
  auto offset_of = [&](std::size_t i, std::uint32_t id) {
    auto& v = offsets[i];
    if (v.size() <= id) v.resize(index.num_keys(i), SIZE_MAX);
    if (v[id] == SIZE_MAX) v[id] = layout.offset(i, index.key(i, id));
    return v[id];
  };

  std::vector<double> scratch(layout.size, 0.0);
  for (std::size_t n = 0; n < en.nodes.size(); ++n) {
    const auto& node = en.nodes[n];
    for (auto [a, pa] : x.joint_policy(n)) {
      const auto parts = ar.decode(a);
      for (std::size_t e = node.entry_begin; e < node.entry_begin + node.entry_count; ++e) {
        const double mass = x.visitation.rho[e] * pa;
        if (mass == 0.0) continue;
        const double W = critic_weight(x, kind, n, e, a);
        double sq = 0.0;
        for (std::size_t i = 0; i < n_agents; ++i)
          sq += detail::add_score(r.gradient, offset_of(i, node.keys[i]),
                                  index.distribution(i, node.keys[i]), parts[i], param, mass * W);
        r.second_moment += mass * W * W * sq;
      }
    }
  }
  double norm2 = 0.0;
  for (double v : r.gradient) norm2 += v * v;
  r.variance = r.second_moment - norm2;
  return r;
}

inline GradientReport exact_gradient(const ExactAnalysis& x, CriticKind kind) {
  return exact_gradient(x, kind, make_layout(x.model, x.policy));
}

inline double gradient_variance(const ExactAnalysis& x, CriticKind kind) {
  return exact_gradient(x, kind).variance;
}

/// rho(h_i): visitation mass of an agent's history key.
inline double agent_key_mass(const ExactAnalysis& x, std::size_t agent, const HistoryKey& key) {
  double m = 0.0;
  const auto& en = x.enumeration;
  for (std::size_t n = 0; n < en.nodes.size(); ++n)
    if (en.index.key(agent, en.nodes[n].keys[agent]) == key) m += x.visitation.rho_h[n];
  return m;
}

/// Gradient component at (agent, key, action) divided by rho(h_i): under the direct
/// parameterization this is E[W | h_i, a_i].
inline double conditional_component(const ExactAnalysis& x, const GradientReport& g,
                                    const ParameterLayout& layout, std::size_t agent,
                                    const HistoryKey& key, std::size_t action) {
  const double mass = agent_key_mass(x, agent, key);
  if (!(mass > 0.0)) throw PreconditionError("history is not reachable");
  return g.gradient[layout.offset(agent, key) + action] / mass;
}

/// Joint-history classes consistent with an agent's key and their weights rho(h | h_i).
inline std::vector<std::pair<std::size_t, double>> history_weights(const ExactAnalysis& x,
                                                                   std::size_t agent,
                                                                   const HistoryKey& key) {
  std::vector<std::pair<std::size_t, double>> out;
  const double mass = agent_key_mass(x, agent, key);
  const auto& en = x.enumeration;
  if (!(mass > 0.0)) return out;
  for (std::size_t n = 0; n < en.nodes.size(); ++n)
    if (en.index.key(agent, en.nodes[n].keys[agent]) == key)
      out.emplace_back(n, x.visitation.rho_h[n] / mass);
  return out;
}

/// Exact expected return J of a policy.
inline double expected_return(const DecPomdpModel& m, const TabularJointPolicy& p,
                              const ExactOptions& opt = {}) {
  return analyze(m, p, opt).values.expected_return;
}

/// `@` for the empty joint history, otherwise `a1,..,an/o1,..,on/...`.
inline std::string format_joint_history(const DecPomdpModel& m, const JointHistory& h) {
  if (h.empty()) return "@";
  std::string out;
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (k) out += '/';
    out += m.joint_action_label(h[k].action) + '/' + m.joint_observation_label(h[k].observation);
  }
  return out;
}

inline JointHistory parse_joint_history(const DecPomdpModel& m, const std::string& text) {
  JointHistory h;
  if (text == "@" || text.empty()) return h;
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (true) {
    const auto slash = text.find('/', start);
    tokens.push_back(text.substr(start, slash == std::string::npos ? slash : slash - start));
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  if (tokens.size() % 2) throw Error("joint history '" + text + "' must alternate actions and observations");
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::size_t b = 0;
    while (true) {
      const auto c = s.find(',', b);
      parts.push_back(s.substr(b, c == std::string::npos ? c : c - b));
      if (c == std::string::npos) break;
      b = c + 1;
    }
    return parts;
  };
  for (std::size_t k = 0; k < tokens.size(); k += 2) {
    const auto as = split(tokens[k]), os = split(tokens[k + 1]);
    if (as.size() != m.num_agents() || os.size() != m.num_agents())
      throw Error("joint history '" + text + "' has the wrong number of agents");
    std::vector<std::size_t> ap, op;
    for (std::size_t i = 0; i < m.num_agents(); ++i) {
      ap.push_back(m.action_index(i, as[i]));
      op.push_back(m.observation_index(i, os[i]));
    }
    h.push_back({m.action_radix().encode(ap), m.observation_radix().encode(op)});
  }
  return h;
}

/// Node reached by a joint history given in `/` notation; throws if unreachable.
inline std::size_t find_history(const ExactAnalysis& x, const std::string& text) {
  auto n = x.enumeration.find(parse_joint_history(x.model, text));
  if (!n) throw Error("joint history '" + text + "' is not reachable under the policy");
  return *n;
}

/// Entry index of state s within a node; throws if (h,s) is unreachable.
inline std::size_t find_entry(const ExactAnalysis& x, std::size_t node, StateIndex s) {
  const auto& nd = x.enumeration.nodes[node];
  for (std::size_t e = nd.entry_begin; e < nd.entry_begin + nd.entry_count; ++e)
    if (x.enumeration.entry_state[e] == s) return e;
  throw Error("state '" + x.model.states[s] + "' is unreachable at this history");
}

}  // namespace dcl
