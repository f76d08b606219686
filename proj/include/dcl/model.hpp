#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/error.hpp"

namespace dcl {

using StateIndex = std::size_t;
using JointActionIndex = std::size_t;
using JointObservationIndex = std::size_t;

/// Mixed-radix codec between per-agent component indices and a flat joint index.
/// Agent 0 is the most significant digit, so flat order is lexicographic.
class Radix {
 public:
  Radix() = default;
  explicit Radix(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
    total_ = 1;
    for (auto s : sizes_) total_ *= s;
  }

  std::size_t size() const { return total_; }
  std::size_t digits() const { return sizes_.size(); }
  std::size_t digit_size(std::size_t i) const { return sizes_[i]; }

  std::size_t encode(std::span<const std::size_t> parts) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < sizes_.size(); ++i) idx = idx * sizes_[i] + parts[i];
    return idx;
  }

  std::vector<std::size_t> decode(std::size_t idx) const {
    std::vector<std::size_t> parts(sizes_.size());
    for (std::size_t i = sizes_.size(); i-- > 0;) {
      parts[i] = idx % sizes_[i];
      idx /= sizes_[i];
    }
    return parts;
  }

  std::size_t component(std::size_t idx, std::size_t agent) const {
    for (std::size_t i = sizes_.size(); i-- > agent + 1;) idx /= sizes_[i];
    return idx % sizes_[agent];
  }

 private:
  std::vector<std::size_t> sizes_;
  std::size_t total_ = 1;
};

/// Per-agent action indices.
struct JointAction {
  std::vector<std::size_t> parts;
  auto operator<=>(const JointAction&) const = default;
};

/// Per-agent observation indices.
struct JointObservation {
  std::vector<std::size_t> parts;
  auto operator<=>(const JointObservation&) const = default;
};

/// Tabular finite-horizon Dec-POMDP.
///
/// Dense tables, all indexed by flat joint indices:
///   transition  [s][a][s']   T(s' | s, a)
///   observation [a][s'][o]   O(o | a, s')     (conditioned on the successor state)
///   reward      [s][a][s']   R(s, a, s')
struct DecPomdpModel {
  std::vector<std::string> states;
  std::vector<std::vector<std::string>> actions;
  std::vector<std::vector<std::string>> observations;
  std::vector<double> initial;
  std::vector<double> transition;
  std::vector<double> observation;
  std::vector<double> reward;
  double discount = 1.0;
  int horizon = 1;

  bool operator==(const DecPomdpModel&) const = default;

  std::size_t num_agents() const { return actions.size(); }
  std::size_t num_states() const { return states.size(); }

  Radix action_radix() const {
    std::vector<std::size_t> sizes;
    for (const auto& a : actions) sizes.push_back(a.size());
    return Radix(std::move(sizes));
  }
  Radix observation_radix() const {
    std::vector<std::size_t> sizes;
    for (const auto& o : observations) sizes.push_back(o.size());
    return Radix(std::move(sizes));
  }
  std::size_t num_joint_actions() const { return action_radix().size(); }
  std::size_t num_joint_observations() const { return observation_radix().size(); }

  /// Allocates zeroed tables sized for the current label sets.
  void resize_tables() {
    const auto S = num_states(), A = num_joint_actions(), O = num_joint_observations();
    initial.assign(S, 0.0);
    transition.assign(S * A * S, 0.0);
    observation.assign(A * S * O, 0.0);
    reward.assign(S * A * S, 0.0);
  }

  std::size_t transition_offset(StateIndex s, JointActionIndex a) const {
    return (s * num_joint_actions() + a) * num_states();
  }
  std::size_t observation_offset(JointActionIndex a, StateIndex next) const {
    return (a * num_states() + next) * num_joint_observations();
  }

  double& T(StateIndex s, JointActionIndex a, StateIndex next) {
    return transition[transition_offset(s, a) + next];
  }
  double T(StateIndex s, JointActionIndex a, StateIndex next) const {
    return transition[transition_offset(s, a) + next];
  }
  double& O(JointActionIndex a, StateIndex next, JointObservationIndex o) {
    return observation[observation_offset(a, next) + o];
  }
  double O(JointActionIndex a, StateIndex next, JointObservationIndex o) const {
    return observation[observation_offset(a, next) + o];
  }
  double& R(StateIndex s, JointActionIndex a, StateIndex next) {
    return reward[transition_offset(s, a) + next];
  }
  double R(StateIndex s, JointActionIndex a, StateIndex next) const {
    return reward[transition_offset(s, a) + next];
  }

  StateIndex state_index(std::string_view label) const { return find_label(states, label, "state"); }
  std::size_t action_index(std::size_t agent, std::string_view label) const {
    return find_label(actions.at(agent), label, "action");
  }
  std::size_t observation_index(std::size_t agent, std::string_view label) const {
    return find_label(observations.at(agent), label, "observation");
  }

  JointActionIndex joint_action(std::initializer_list<std::string_view> labels) const {
    std::vector<std::size_t> parts;
    std::size_t i = 0;
    for (auto l : labels) parts.push_back(action_index(i++, l));
    return action_radix().encode(parts);
  }
  JointObservationIndex joint_observation(std::initializer_list<std::string_view> labels) const {
    std::vector<std::size_t> parts;
    std::size_t i = 0;
    for (auto l : labels) parts.push_back(observation_index(i++, l));
    return observation_radix().encode(parts);
  }

  std::string joint_action_label(JointActionIndex a) const {
    auto parts = action_radix().decode(a);
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += ',';
      out += actions[i][parts[i]];
    }
    return out;
  }
  std::string joint_observation_label(JointObservationIndex o) const {
    auto parts = observation_radix().decode(o);
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += ',';
      out += observations[i][parts[i]];
    }
    return out;
  }

 private:
  static std::size_t find_label(const std::vector<std::string>& labels, std::string_view label,
                                std::string_view what) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return i;
    throw Error("unknown " + std::string(what) + " label '" + std::string(label) + "'");
  }
};

struct Violation {
  std::string location;
  std::string message;
};

using ValidationReport = std::vector<Violation>;

inline constexpr double kNormalizationTolerance = 1e-12;

namespace detail {

inline bool valid_label(const std::string& s) {
  if (s.empty() || s == "->" || s == "*" || s == "@") return false;
  for (char c : s)
    if (c == ',' || c == '/' || c == ':' || c == '#' || c == ' ' || c == '\t' || c == '\n' ||
        c == '\r')
      return false;
  return true;
}

inline void check_labels(const std::vector<std::string>& labels, const std::string& where,
                         ValidationReport& out) {
  if (labels.empty()) out.push_back({where, "must declare at least one label"});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!valid_label(labels[i]))
      out.push_back({where, "invalid label '" + labels[i] + "'"});
    for (std::size_t j = 0; j < i; ++j)
      if (labels[i] == labels[j]) out.push_back({where, "duplicate label '" + labels[i] + "'"});
  }
}

inline std::string fmt_sum(double v) {
  std::ostringstream os;
  os.precision(15);
  os << v;
  return os.str();
}

inline void check_distribution(std::span<const double> row, const std::string& where,
                               ValidationReport& out) {
  double sum = 0.0;
  for (double p : row) {
    if (!std::isfinite(p) || p < 0.0) {
      out.push_back({where, "entries must be finite and non-negative"});
      return;
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kNormalizationTolerance)
    out.push_back({where, "row sums to " + fmt_sum(sum) + ", expected 1"});
}

}  // namespace detail

/// Lists every structural, normalization and range violation. Empty means valid.
inline ValidationReport validate(const DecPomdpModel& m) {
  ValidationReport out;
  if (m.horizon < 1) out.push_back({"horizon", "horizon must be >= 1"});
  if (!(m.discount >= 0.0 && m.discount <= 1.0))
    out.push_back({"discount", "discount must lie in [0, 1]"});
  if (m.actions.empty()) out.push_back({"agents", "at least one agent is required"});
  if (m.observations.size() != m.actions.size())
    out.push_back({"observations", "observation sets must be declared for every agent"});
  detail::check_labels(m.states, "states", out);
  for (std::size_t i = 0; i < m.actions.size(); ++i)
    detail::check_labels(m.actions[i], "actions " + std::to_string(i), out);
  for (std::size_t i = 0; i < m.observations.size(); ++i)
    detail::check_labels(m.observations[i], "observations " + std::to_string(i), out);
  if (!out.empty() && (m.states.empty() || m.actions.empty() ||
                       m.observations.size() != m.actions.size()))
    return out;

  const auto S = m.num_states(), A = m.num_joint_actions(), O = m.num_joint_observations();
  if (m.initial.size() != S || m.transition.size() != S * A * S ||
      m.observation.size() != A * S * O || m.reward.size() != S * A * S) {
    out.push_back({"tables", "table sizes do not match the declared label sets"});
    return out;
  }

  detail::check_distribution(m.initial, "start", out);
  for (StateIndex s = 0; s < S; ++s)
    for (JointActionIndex a = 0; a < A; ++a)
      detail::check_distribution(
          std::span<const double>(m.transition).subspan(m.transition_offset(s, a), S),
          "T(" + m.states[s] + ", " + m.joint_action_label(a) + ")", out);
  for (JointActionIndex a = 0; a < A; ++a)
    for (StateIndex n = 0; n < S; ++n)
      detail::check_distribution(
          std::span<const double>(m.observation).subspan(m.observation_offset(a, n), O),
          "O(" + m.joint_action_label(a) + ", " + m.states[n] + ")", out);
  for (std::size_t k = 0; k < m.reward.size(); ++k)
    if (!std::isfinite(m.reward[k])) {
      out.push_back({"R", "rewards must be finite"});
      break;
    }
  return out;
}

/// States that self-loop with probability one and zero reward under every joint action.
/// Reaching one ends the episode.
inline std::vector<bool> absorbing_states(const DecPomdpModel& m) {
  std::vector<bool> out(m.num_states(), false);
  const auto A = m.num_joint_actions();
  for (StateIndex s = 0; s < m.num_states(); ++s) {
    bool absorbing = true;
    for (JointActionIndex a = 0; a < A && absorbing; ++a)
      absorbing = m.T(s, a, s) == 1.0 && m.R(s, a, s) == 0.0;
    out[s] = absorbing;
  }
  return out;
}

/// Sparse view of the dynamics for the forward and backward passes.
class SparseDynamics {
 public:
  struct Entry {
    std::size_t index;
    double probability;
  };

  explicit SparseDynamics(const DecPomdpModel& m)
      : S_(m.num_states()), A_(m.num_joint_actions()), absorbing_(absorbing_states(m)) {
    const auto O = m.num_joint_observations();
    successors_.resize(S_ * A_);
    for (StateIndex s = 0; s < S_; ++s)
      for (JointActionIndex a = 0; a < A_; ++a)
        for (StateIndex n = 0; n < S_; ++n)
          if (double p = m.T(s, a, n); p > 0.0) successors_[s * A_ + a].push_back({n, p});
    emissions_.resize(A_ * S_);
    for (JointActionIndex a = 0; a < A_; ++a)
      for (StateIndex n = 0; n < S_; ++n)
        for (JointObservationIndex o = 0; o < O; ++o)
          if (double p = m.O(a, n, o); p > 0.0) emissions_[a * S_ + n].push_back({o, p});
  }

  const std::vector<Entry>& successors(StateIndex s, JointActionIndex a) const {
    return successors_[s * A_ + a];
  }
  const std::vector<Entry>& emissions(JointActionIndex a, StateIndex next) const {
    return emissions_[a * S_ + next];
  }
  bool absorbing(StateIndex s) const { return absorbing_[s]; }

 private:
  std::size_t S_, A_;
  std::vector<bool> absorbing_;
  std::vector<std::vector<Entry>> successors_;
  std::vector<std::vector<Entry>> emissions_;
};

}  // namespace dcl
