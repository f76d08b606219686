#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/model.hpp"
#include "dcl/policy.hpp"

namespace dcl {

inline constexpr std::array<std::string_view, 3> kBuiltinModels = {"dectiger", "beverage",
                                                                   "meetgrid3"};
inline constexpr std::array<std::string_view, 3> kBuiltinPolicies = {
    "uniform", "dectiger-listen-open", "dectiger-listen-always"};

namespace builtin {

/// Two-agent Dec-Tiger. Joint listen keeps the state and each agent independently hears
/// the correct side with probability `accuracy`; any door opening moves to the absorbing
/// `done` state, which emits (hear-left, hear-left).
inline DecPomdpModel dectiger(int horizon = 3, double accuracy = 0.85) {
  DecPomdpModel m;
  m.states = {"tiger-left", "tiger-right", "done"};
  m.actions = {{"listen", "open-left", "open-right"}, {"listen", "open-left", "open-right"}};
  m.observations = {{"hear-left", "hear-right"}, {"hear-left", "hear-right"}};
  m.horizon = horizon;
  m.discount = 1.0;
  m.resize_tables();
  m.initial = {0.5, 0.5, 0.0};

  constexpr std::size_t kListen = 0, kOpenLeft = 1, kOpenRight = 2;
  constexpr StateIndex kDone = 2;
  const auto ar = m.action_radix();
  const auto orx = m.observation_radix();
  const JointActionIndex listen_pair = ar.encode(std::vector<std::size_t>{kListen, kListen});
  const JointObservationIndex dummy = orx.encode(std::vector<std::size_t>{0, 0});

  for (JointActionIndex a = 0; a < m.num_joint_actions(); ++a) {
    const auto parts = ar.decode(a);
    for (StateIndex s = 0; s < 2; ++s) {
      if (a == listen_pair) {
        m.T(s, a, s) = 1.0;
        m.R(s, a, s) = -2.0;
        continue;
      }
      m.T(s, a, kDone) = 1.0;
      const std::size_t tiger_door = s == 0 ? kOpenLeft : kOpenRight;
      double r = 0.0;
      if (parts[0] == parts[1]) {
        r = parts[0] == tiger_door ? -50.0 : 20.0;
      } else if (parts[0] == kListen || parts[1] == kListen) {
        const auto opened = parts[0] == kListen ? parts[1] : parts[0];
        r = opened == tiger_door ? -101.0 : 9.0;
      } else {
        r = -100.0;
      }
      m.R(s, a, kDone) = r;
    }
    m.T(kDone, a, kDone) = 1.0;
  }

  for (JointActionIndex a = 0; a < m.num_joint_actions(); ++a) {
    for (StateIndex n = 0; n < 2; ++n) {
      for (JointObservationIndex o = 0; o < m.num_joint_observations(); ++o) {
        if (a != listen_pair) {
          // Unreachable rows; uniform keeps the table normalized.
          m.O(a, n, o) = 0.25;
          continue;
        }
        const auto op = orx.decode(o);
        double p = 1.0;
        for (auto heard : op) p *= heard == n ? accuracy : 1.0 - accuracy;
        m.O(a, n, o) = p;
      }
    }
    m.O(a, kDone, dummy) = 1.0;
  }
  return m;
}

/// Single-agent barista: the client prefers coffee or tea uniformly at random and is never
/// observed. +1 for the right beverage, -1 otherwise.
inline DecPomdpModel beverage() {
  DecPomdpModel m;
  m.states = {"coffee", "tea"};
  m.actions = {{"serve-coffee", "serve-tea"}};
  m.observations = {{"none"}};
  m.horizon = 1;
  m.discount = 1.0;
  m.resize_tables();
  m.initial = {0.5, 0.5};
  for (StateIndex s = 0; s < 2; ++s)
    for (JointActionIndex a = 0; a < 2; ++a) {
      m.T(s, a, s) = 1.0;
      m.R(s, a, s) = s == a ? 1.0 : -1.0;
    }
  for (JointActionIndex a = 0; a < 2; ++a)
    for (StateIndex n = 0; n < 2; ++n) m.O(a, n, 0) = 1.0;
  return m;
}

/// Two agents on a 3x3 grid starting in opposite corners. Moves are deterministic (walls
/// block), each agent observes its own cell, reward +1 whenever both end a step in the
/// same cell.
inline DecPomdpModel meetgrid3(int horizon = 8) {
  constexpr int kSide = 3, kCells = kSide * kSide;
  DecPomdpModel m;
  auto cell = [](int c) { return "r" + std::to_string(c / kSide) + "c" + std::to_string(c % kSide); };
  for (int a = 0; a < kCells; ++a)
    for (int b = 0; b < kCells; ++b) m.states.push_back(cell(a) + "-" + cell(b));
  const std::vector<std::string> moves = {"up", "down", "left", "right", "stay"};
  m.actions = {moves, moves};
  std::vector<std::string> cells;
  for (int c = 0; c < kCells; ++c) cells.push_back(cell(c));
  m.observations = {cells, cells};
  m.horizon = horizon;
  m.discount = 1.0;
  m.resize_tables();

  auto move = [](int c, std::size_t dir) {
    int r = c / kSide, col = c % kSide;
    switch (dir) {
      case 0: r = std::max(0, r - 1); break;
      case 1: r = std::min(kSide - 1, r + 1); break;
      case 2: col = std::max(0, col - 1); break;
      case 3: col = std::min(kSide - 1, col + 1); break;
      default: break;
    }
    return r * kSide + col;
  };

  m.initial[static_cast<std::size_t>(0 * kCells + (kCells - 1))] = 1.0;
  const auto ar = m.action_radix();
  const auto orx = m.observation_radix();
  for (int c0 = 0; c0 < kCells; ++c0)
    for (int c1 = 0; c1 < kCells; ++c1) {
      const StateIndex s = static_cast<StateIndex>(c0 * kCells + c1);
      for (JointActionIndex a = 0; a < m.num_joint_actions(); ++a) {
        const auto parts = ar.decode(a);
        const int n0 = move(c0, parts[0]), n1 = move(c1, parts[1]);
        const StateIndex next = static_cast<StateIndex>(n0 * kCells + n1);
        m.T(s, a, next) = 1.0;
        m.R(s, a, next) = n0 == n1 ? 1.0 : 0.0;
      }
    }
  for (JointActionIndex a = 0; a < m.num_joint_actions(); ++a)
    for (int c0 = 0; c0 < kCells; ++c0)
      for (int c1 = 0; c1 < kCells; ++c1) {
        const StateIndex n = static_cast<StateIndex>(c0 * kCells + c1);
        m.O(a, n, orx.encode(std::vector<std::size_t>{static_cast<std::size_t>(c0),
                                                      static_cast<std::size_t>(c1)})) = 1.0;
      }
  return m;
}

/// Dec-Tiger policy that listens until the final step and then opens the door away from
/// the side it heard most often; a tie is broken by the first observation. At horizon 3
/// this is the listen-twice-then-open policy; at horizon 4 it listens three times.
inline TabularJointPolicy dectiger_listen_open(const DecPomdpModel& m) {
  TabularJointPolicy p = uniform_policy(m, HistoryView::full());
  const std::size_t listen = m.action_index(0, "listen");
  const std::size_t open_left = m.action_index(0, "open-left");
  const std::size_t open_right = m.action_index(0, "open-right");
  const std::size_t hear_left = m.observation_index(0, "hear-left");
  const auto last = static_cast<std::size_t>(m.horizon - 1);

  for (std::size_t i = 0; i < m.num_agents(); ++i) {
    std::vector<HistoryKey> layer{HistoryKey{}};
    for (std::size_t t = 0; t <= last; ++t) {
      std::vector<HistoryKey> next;
      for (const auto& key : layer) {
        std::vector<double> dist(3, 0.0);
        if (t < last || t == 0) {
          dist[listen] = 1.0;
        } else {
          int left = 0, right = 0;
          for (std::size_t k = 1; k < key.size(); k += 2)
            (static_cast<std::size_t>(key[k]) == hear_left ? left : right)++;
          bool heard_left = left > right;
          if (left == right) heard_left = static_cast<std::size_t>(key[1]) == hear_left;
          dist[heard_left ? open_right : open_left] = 1.0;
        }
        p.agents[i].set(key, dist);
        if (t < last)
          for (std::size_t o = 0; o < 2; ++o)
            next.push_back(extend_key(HistoryView::full(), key, listen, o));
      }
      layer = std::move(next);
    }
  }
  return p;
}

/// Listens at every history (full-memory table, so every joint history stays distinct).
inline TabularJointPolicy dectiger_listen_always(const DecPomdpModel& m) {
  TabularJointPolicy p = uniform_policy(m, HistoryView::full());
  const std::size_t listen = m.action_index(0, "listen");
  for (std::size_t i = 0; i < m.num_agents(); ++i) {
    std::vector<double> dist(p.agents[i].num_actions(), 0.0);
    dist[listen] = 1.0;
    for (const auto& key : all_keys(m, i, HistoryView::full())) p.agents[i].set(key, dist);
  }
  return p;
}

}  // namespace builtin

namespace detail {
template <class Names>
std::string join_names(const Names& names) {
  std::string out;
  for (auto n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}
}  // namespace detail

/// Builtin model by identifier; throws naming the valid identifiers otherwise.
inline DecPomdpModel builtin_model(std::string_view name) {
  if (name == "dectiger") return builtin::dectiger();
  if (name == "beverage") return builtin::beverage();
  if (name == "meetgrid3") return builtin::meetgrid3();
  throw Error("unknown builtin model '" + std::string(name) +
              "'; valid identifiers: " + detail::join_names(kBuiltinModels));
}

/// Builtin policy for a model (the model's horizon shapes the Dec-Tiger policies).
inline TabularJointPolicy builtin_policy(std::string_view name, const DecPomdpModel& m) {
  if (name == "uniform") return uniform_policy(m);
  if (name == "dectiger-listen-open") return builtin::dectiger_listen_open(m);
  if (name == "dectiger-listen-always") return builtin::dectiger_listen_always(m);
  throw Error("unknown builtin policy '" + std::string(name) +
              "'; valid identifiers: " + detail::join_names(kBuiltinPolicies));
}

}  // namespace dcl
