#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/model.hpp"
#include "dcl/rng.hpp"

namespace dcl {

enum class Parameterization { direct, softmax };

inline std::string to_string(Parameterization p) {
  return p == Parameterization::direct ? "direct" : "softmax";
}

/// What part of an agent's action-observation history a policy conditions on.
struct HistoryView {
  enum class Kind { full, last_steps, last_observations };
  Kind kind = Kind::full;
  std::size_t length = 0;

  static HistoryView full() { return {Kind::full, 0}; }
  /// Last k (action, observation) steps; k = 0 ignores history entirely.
  static HistoryView last_steps(std::size_t k) { return {Kind::last_steps, k}; }
  static HistoryView last_observations(std::size_t k) { return {Kind::last_observations, k}; }
  /// Conditions on the most recent observation only.
  static HistoryView reactive() { return last_observations(1); }

  bool operator==(const HistoryView&) const = default;

  bool bounded() const { return kind != Kind::full; }
  std::size_t tokens_per_step() const { return kind == Kind::last_observations ? 1 : 2; }
};

inline std::string to_string(const HistoryView& v) {
  switch (v.kind) {
    case HistoryView::Kind::full: return "full";
    case HistoryView::Kind::last_steps: return "last " + std::to_string(v.length);
    case HistoryView::Kind::last_observations: return "obs " + std::to_string(v.length);
  }
  return "full";
}

/// One step of an individual history.
struct Step {
  std::size_t action;
  std::size_t observation;
  auto operator<=>(const Step&) const = default;
};

using IndividualHistory = std::vector<Step>;

/// The history as seen through a view: flattened `a o a o ...` tokens, or `o o ...`
/// for observation-only views.
using HistoryKey = std::vector<std::int32_t>;

inline HistoryKey extend_key(const HistoryView& view, const HistoryKey& key, std::size_t action,
                             std::size_t observation) {
  HistoryKey out = key;
  if (view.kind != HistoryView::Kind::last_observations) out.push_back(static_cast<int>(action));
  out.push_back(static_cast<int>(observation));
  if (view.bounded()) {
    const std::size_t max_tokens = view.length * view.tokens_per_step();
    if (out.size() > max_tokens) out.erase(out.begin(), out.end() - static_cast<long>(max_tokens));
  }
  return out;
}

inline HistoryKey key_of(const HistoryView& view, const IndividualHistory& history) {
  HistoryKey key;
  for (const auto& st : history) key = extend_key(view, key, st.action, st.observation);
  return key;
}

/// `@` for the empty key, otherwise `/`-joined labels.
inline std::string format_key(const DecPomdpModel& m, std::size_t agent, const HistoryView& view,
                              const HistoryKey& key) {
  if (key.empty()) return "@";
  std::string out;
  const bool obs_only = view.kind == HistoryView::Kind::last_observations;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) out += '/';
    const bool is_action = !obs_only && i % 2 == 0;
    out += is_action ? m.actions[agent][static_cast<std::size_t>(key[i])]
                     : m.observations[agent][static_cast<std::size_t>(key[i])];
  }
  return out;
}

inline HistoryKey parse_key(const DecPomdpModel& m, std::size_t agent, const HistoryView& view,
                            const std::string& text) {
  HistoryKey key;
  if (text == "@") return key;
  const bool obs_only = view.kind == HistoryView::Kind::last_observations;
  std::size_t start = 0, i = 0;
  while (true) {
    const auto slash = text.find('/', start);
    const std::string tok = text.substr(start, slash == std::string::npos ? slash : slash - start);
    const bool is_action = !obs_only && i % 2 == 0;
    key.push_back(static_cast<int>(is_action ? m.action_index(agent, tok)
                                             : m.observation_index(agent, tok)));
    ++i;
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  if (!obs_only && key.size() % 2 != 0)
    throw Error("history '" + text + "' must alternate actions and observations");
  if (view.bounded() && key.size() > view.length * view.tokens_per_step())
    throw Error("history '" + text + "' is longer than the policy memory (" + to_string(view) +
                ")");
  return key;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

/// One agent's tabular policy over history keys.
///
/// Under `direct` the stored vector is the action distribution itself; under `softmax` it
/// holds logits. Keys absent from the table act uniformly.
class AgentPolicy {
 public:
  AgentPolicy() = default;
  AgentPolicy(std::size_t num_actions, HistoryView view, Parameterization param)
      : num_actions_(num_actions), view_(view), param_(param) {}

  std::size_t num_actions() const { return num_actions_; }
  const HistoryView& view() const { return view_; }
  Parameterization parameterization() const { return param_; }
  const std::map<HistoryKey, std::vector<double>>& table() const { return table_; }

  void set(const HistoryKey& key, std::vector<double> values) {
    if (values.size() != num_actions_) throw Error("policy entry has wrong action count");
    table_[key] = std::move(values);
  }

  /// Parameters at a key, defaulting to the uniform-policy parameters.
  std::vector<double> parameters(const HistoryKey& key) const {
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    return param_ == Parameterization::direct
               ? std::vector<double>(num_actions_, 1.0 / static_cast<double>(num_actions_))
               : std::vector<double>(num_actions_, 0.0);
  }

  std::vector<double> distribution(const HistoryKey& key) const {
    auto theta = parameters(key);
    return param_ == Parameterization::direct ? theta : softmax(theta);
  }

  bool operator==(const AgentPolicy&) const = default;

 private:
  std::size_t num_actions_ = 0;
  HistoryView view_;
  Parameterization param_ = Parameterization::direct;
  std::map<HistoryKey, std::vector<double>> table_;
};

/// Decentralized joint policy: one AgentPolicy per agent.
struct TabularJointPolicy {
  std::vector<AgentPolicy> agents;

  Parameterization parameterization() const {
    return agents.empty() ? Parameterization::direct : agents.front().parameterization();
  }
  std::size_t num_agents() const { return agents.size(); }

  bool operator==(const TabularJointPolicy&) const = default;
};

/// Uniform policy with the given view for every agent.
inline TabularJointPolicy uniform_policy(const DecPomdpModel& m,
                                         HistoryView view = HistoryView::last_steps(0),
                                         Parameterization param = Parameterization::direct) {
  TabularJointPolicy p;
  for (std::size_t i = 0; i < m.num_agents(); ++i)
    p.agents.emplace_back(m.actions[i].size(), view, param);
  return p;
}

/// Every key an agent can hold at timesteps 0..horizon-1 under a view.
inline std::vector<HistoryKey> all_keys(const DecPomdpModel& m, std::size_t agent,
                                        const HistoryView& view,
                                        std::size_t max_keys = 1'000'000) {
  const std::size_t na = m.actions[agent].size(), no = m.observations[agent].size();
  std::size_t max_len = static_cast<std::size_t>(std::max(0, m.horizon - 1));
  if (view.bounded()) max_len = std::min(max_len, view.length);
  std::vector<HistoryKey> out{HistoryKey{}};
  std::vector<HistoryKey> layer{HistoryKey{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<HistoryKey> next;
    for (const auto& k : layer) {
      if (view.kind == HistoryView::Kind::last_observations) {
        for (std::size_t o = 0; o < no; ++o) {
          auto c = k;
          c.push_back(static_cast<int>(o));
          next.push_back(std::move(c));
        }
      } else {
        for (std::size_t a = 0; a < na; ++a)
          for (std::size_t o = 0; o < no; ++o) {
            auto c = k;
            c.push_back(static_cast<int>(a));
            c.push_back(static_cast<int>(o));
            next.push_back(std::move(c));
          }
      }
      if (out.size() + next.size() > max_keys)
        throw ResourceError("history key enumeration exceeds cap of " + std::to_string(max_keys));
    }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

/// Random policy over every key of the view. Direct: Dirichlet(1) rows; softmax: N(0,1) logits.
inline TabularJointPolicy random_policy(const DecPomdpModel& m, HistoryView view,
                                        std::uint64_t seed,
                                        Parameterization param = Parameterization::direct) {
  TabularJointPolicy p = uniform_policy(m, view, param);
  Rng rng(seed);
  for (std::size_t i = 0; i < m.num_agents(); ++i) {
    const auto na = m.actions[i].size();
    for (const auto& key : all_keys(m, i, view)) {
      std::vector<double> v(na);
      if (param == Parameterization::direct) {
        double z = 0.0;
        for (auto& x : v) z += (x = rng.exponential());
        for (auto& x : v) x /= z;
      } else {
        for (auto& x : v) x = rng.normal();
      }
      p.agents[i].set(key, std::move(v));
    }
  }
  return p;
}

/// Same behaviour, softmax parameterization (logits = log pi). Requires full support.
inline TabularJointPolicy to_softmax(const TabularJointPolicy& direct) {
  TabularJointPolicy out;
  for (const auto& ag : direct.agents) {
    AgentPolicy sp(ag.num_actions(), ag.view(), Parameterization::softmax);
    for (const auto& [key, theta] : ag.table()) {
      std::vector<double> logits(theta.size());
      for (std::size_t a = 0; a < theta.size(); ++a) {
        const double pa = ag.parameterization() == Parameterization::direct
                              ? theta[a]
                              : softmax(theta)[a];
        if (!(pa > 0.0)) throw PreconditionError("softmax conversion needs pi > 0 everywhere");
        logits[a] = std::log(pa);
      }
      sp.set(key, std::move(logits));
    }
    out.agents.push_back(std::move(sp));
  }
  return out;
}

}  // namespace dcl
