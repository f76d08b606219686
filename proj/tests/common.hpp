#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcl/model.hpp"

namespace dcl::test {

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

inline std::vector<double> random_simplex(std::mt19937_64& gen, std::size_t n, bool sparse) {
  std::exponential_distribution<double> ex(1.0);
  std::bernoulli_distribution drop(0.3);
  std::vector<double> v(n);
  double z = 0.0;
  for (auto& x : v) z += (x = (sparse && drop(gen)) ? 0.0 : ex(gen));
  if (z == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= z;
  return v;
}

struct RandomModelShape {
  std::size_t max_agents = 2;
  std::size_t max_states = 4;
  std::size_t max_actions = 3;
  std::size_t max_observations = 2;
  int max_horizon = 3;
  bool allow_absorbing = true;
};

/// Small random valid model; sparse rows, optional zero-reward absorbing state, random discount.
inline DecPomdpModel random_model(std::uint64_t seed, const RandomModelShape& shape = {}) {
  std::mt19937_64 gen(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
  };
  DecPomdpModel m;
  const auto agents = pick(1, shape.max_agents);
  const auto S = pick(2, shape.max_states);
  for (std::size_t s = 0; s < S; ++s) m.states.push_back("s" + std::to_string(s));
  for (std::size_t i = 0; i < agents; ++i) {
    m.actions.emplace_back();
    m.observations.emplace_back();
    for (std::size_t a = 0, n = pick(2, shape.max_actions); a < n; ++a)
      m.actions[i].push_back("a" + std::to_string(i) + "_" + std::to_string(a));
    for (std::size_t o = 0, n = pick(1, shape.max_observations); o < n; ++o)
      m.observations[i].push_back("o" + std::to_string(i) + "_" + std::to_string(o));
  }
  m.horizon = static_cast<int>(pick(1, static_cast<std::size_t>(shape.max_horizon)));
  m.discount = std::bernoulli_distribution(0.5)(gen) ? 1.0 : std::uniform_real_distribution<double>(0.5, 1.0)(gen);
  m.resize_tables();
  const bool absorbing = shape.allow_absorbing && std::bernoulli_distribution(0.5)(gen);
  const std::size_t absorbing_state = S - 1;
  m.initial = random_simplex(gen, S, false);
  if (absorbing) {
    m.initial[absorbing_state] = 0.0;
    double z = 0.0;
    for (double p : m.initial) z += p;
    for (auto& p : m.initial) p /= z;
  }
  const auto A = m.num_joint_actions(), O = m.num_joint_observations();
  std::normal_distribution<double> nd(0.0, 3.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      auto row = random_simplex(gen, S, true);
      if (absorbing && s == absorbing_state) row.assign(S, 0.0), row[s] = 1.0;
      for (std::size_t n = 0; n < S; ++n) {
        m.transition[m.transition_offset(s, a) + n] = row[n];
        m.reward[(s * A + a) * S + n] = (absorbing && s == absorbing_state) ? 0.0 : std::round(nd(gen) * 4.0) / 4.0;
      }
    }
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t n = 0; n < S; ++n) {
      const auto row = random_simplex(gen, O, true);
      for (std::size_t o = 0; o < O; ++o) m.observation[m.observation_offset(a, n) + o] = row[o];
    }
  return m;
}

}  // namespace dcl::test
