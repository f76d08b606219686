#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "dcl/exact.hpp"
#include "dcl/model.hpp"
#include "dcl/policy.hpp"
#include "dcl/rng.hpp"

namespace dcl {

struct TrajectoryStep {
  StateIndex state;
  JointActionIndex action;
  double reward;
  JointObservationIndex observation;
  StateIndex next;
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::vector<TrajectoryStep> steps;
  bool terminal = false;  // ended in an absorbing state before the horizon
  double discounted_return = 0.0;
};

namespace detail {

/// Draws one step of every agent's action given their current keys.
inline JointActionIndex draw_joint_action(const TabularJointPolicy& p, const Radix& ar,
                                          const std::vector<HistoryKey>& keys, Rng& rng) {
  std::vector<std::size_t> parts(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto d = p.agents[i].distribution(keys[i]);
    parts[i] = rng.categorical(d);
  }
  return ar.encode(parts);
}

inline std::size_t draw_row(std::span<const double> row, Rng& rng) { return rng.categorical(row); }

}  // namespace detail

/// Simulates one episode; stops at the horizon or on entering an absorbing state.
inline Trajectory rollout(const DecPomdpModel& m, const TabularJointPolicy& p, Rng& rng,
                          const std::vector<bool>& absorbing) {
  Trajectory tr;
  const auto ar = m.action_radix();
  const auto orx = m.observation_radix();
  const auto S = m.num_states(), O = m.num_joint_observations();
  StateIndex s = detail::draw_row(m.initial, rng);
  if (absorbing[s]) {
    tr.terminal = true;
    return tr;
  }
  std::vector<HistoryKey> keys(m.num_agents());
  double disc = 1.0;
  for (int t = 0; t < m.horizon; ++t) {
    const auto a = detail::draw_joint_action(p, ar, keys, rng);
    const StateIndex next = detail::draw_row(
        std::span<const double>(m.transition).subspan(m.transition_offset(s, a), S), rng);
    const auto o = detail::draw_row(
        std::span<const double>(m.observation).subspan(m.observation_offset(a, next), O), rng);
    const double r = m.R(s, a, next);
    tr.steps.push_back({s, a, r, o, next});
    tr.discounted_return += disc * r;
    disc *= m.discount;
    if (absorbing[next]) {
      tr.terminal = t + 1 < m.horizon;
      break;
    }
    const auto ap = ar.decode(a), op = orx.decode(o);
    for (std::size_t i = 0; i < keys.size(); ++i)
      keys[i] = extend_key(p.agents[i].view(), keys[i], ap[i], op[i]);
    s = next;
  }
  return tr;
}

inline Trajectory rollout(const DecPomdpModel& m, const TabularJointPolicy& p, std::uint64_t seed) {
  Rng rng(seed);
  auto tr = rollout(m, p, rng, absorbing_states(m));
  tr.seed = seed;
  return tr;
}

/// A draw (h, s, a) ~ rho(h,s) pi(a|h).
struct SamplePoint {
  int t = 0;
  JointHistory history;
  StateIndex state = 0;
  JointActionIndex action = 0;
};

/// Visit weight of timestep t: gamma^t for rewards-to-go, 1 for whole-episode returns.
inline double visit_weight(ReturnConvention r, double discount, int t) {
  return r == ReturnConvention::to_go ? std::pow(discount, t) : 1.0;
}

/// Rolls out a trajectory, accepts it with probability (weight of its realized steps) /
/// (weight of a full-length episode), then picks a realized step with probability
/// proportional to its weight. The accepted (h,s) is distributed exactly as rho.
inline SamplePoint sample_point(const DecPomdpModel& m, const TabularJointPolicy& p, Rng& rng,
                                const std::vector<bool>& absorbing,
                                ReturnConvention returns = ReturnConvention::to_go) {
  std::vector<double> w(static_cast<std::size_t>(m.horizon));
  double full = 0.0;
  for (int t = 0; t < m.horizon; ++t) full += (w[static_cast<std::size_t>(t)] = visit_weight(returns, m.discount, t));
  while (true) {
    const auto tr = rollout(m, p, rng, absorbing);
    const auto L = tr.steps.size();
    if (L == 0) continue;
    double realized = 0.0;
    for (std::size_t t = 0; t < L; ++t) realized += w[t];
    if (L < w.size() && !(rng.uniform() * full < realized)) continue;
    const auto t = rng.categorical(std::span<const double>(w).first(L));
    SamplePoint pt;
    pt.t = static_cast<int>(t);
    for (std::size_t k = 0; k < t; ++k) pt.history.push_back({tr.steps[k].action, tr.steps[k].observation});
    pt.state = tr.steps[t].state;
    pt.action = tr.steps[t].action;
    return pt;
  }
}

inline SamplePoint sample_point(const DecPomdpModel& m, const TabularJointPolicy& p, std::uint64_t seed,
                                ReturnConvention returns = ReturnConvention::to_go) {
  Rng rng(seed);
  return sample_point(m, p, rng, absorbing_states(m), returns);
}

/// Single-sample estimator W(kind) * grad log pi at a sampled point.
struct McEstimate {
  CriticKind kind = CriticKind::H;
  SamplePoint point;
  double weight = 0.0;
  std::vector<double> gradient;
};

namespace detail {

/// Sparse form of the estimator: (parameter index, value) pairs.
inline double sparse_estimate(const ExactAnalysis& x, const ParameterLayout& layout, CriticKind kind,
                              const SamplePoint& pt, std::vector<std::pair<std::size_t, double>>& out) {
  out.clear();
  const auto node = x.enumeration.find(pt.history);
  if (!node) throw PreconditionError("sampled history is not reachable under the exact enumeration");
  const auto entry = find_entry(x, *node, pt.state);
  const double W = critic_weight(x, kind, *node, entry, pt.action);
  const auto parts = x.model.action_radix().decode(pt.action);
  const auto param = x.policy.parameterization();
  const auto& nd = x.enumeration.nodes[*node];
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& key = x.enumeration.index.key(i, nd.keys[i]);
    const auto pi = x.policy.agents[i].distribution(key);
    const auto off = layout.offset(i, key);
    if (param == Parameterization::direct) {
      if (!(pi[parts[i]] > 0.0)) throw DegenerateScoreError("direct score 1/pi requested where pi = 0");
      out.emplace_back(off + parts[i], W / pi[parts[i]]);
    } else {
      for (std::size_t b = 0; b < pi.size(); ++b)
        out.emplace_back(off + b, W * ((b == parts[i] ? 1.0 : 0.0) - pi[b]));
    }
  }
  return W;
}

}  // namespace detail

inline McEstimate mc_gradient(const ExactAnalysis& x, const ParameterLayout& layout, CriticKind kind,
                              const SamplePoint& pt) {
  McEstimate est;
  est.kind = kind;
  est.point = pt;
  est.gradient.assign(layout.size, 0.0);
  std::vector<std::pair<std::size_t, double>> sparse;
  est.weight = detail::sparse_estimate(x, layout, kind, pt, sparse);
  for (auto [j, v] : sparse) est.gradient[j] += v;
  return est;
}

struct EmpiricalMoments {
  CriticKind kind = CriticKind::H;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<double> mean;
  std::vector<double> mean_se;          // per-component standard error of the mean
  std::optional<double> variance;       // unbiased trace variance; absent when n < 2
  std::optional<double> variance_se;
};

/// Mean and trace variance of n independent single-sample estimates. Worker w draws from
/// Rng(seed).split(w); results depend only on (seed, n, threads).
inline EmpiricalMoments empirical_moments(const ExactAnalysis& x, const ParameterLayout& layout,
                                          CriticKind kind, std::size_t n, std::uint64_t seed,
                                          std::size_t threads = 1) {
  if (n < 1) throw PreconditionError("empirical_moments needs n >= 1");
  threads = std::max<std::size_t>(1, std::min(threads, n));
  using Sparse = std::vector<std::pair<std::size_t, double>>;
  std::vector<std::vector<Sparse>> samples(threads);
  const auto absorbing = absorbing_states(x.model);
  const auto returns = x.enumeration.options.returns;
  const Rng root(seed);

  auto work = [&](std::size_t w) {
    Rng rng = root.split(w);
    const std::size_t count = n / threads + (w < n % threads ? 1 : 0);
    auto& out = samples[w];
    out.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      const auto pt = sample_point(x.model, x.policy, rng, absorbing, returns);
      detail::sparse_estimate(x, layout, kind, pt, out[k]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }

  EmpiricalMoments r;
  r.kind = kind;
  r.n = n;
  r.seed = seed;
  r.threads = threads;
  std::vector<double> sum(layout.size, 0.0), sum2(layout.size, 0.0);
  for (const auto& ws : samples)
    for (const auto& s : ws)
      for (auto [j, v] : s) {
        sum[j] += v;
        sum2[j] += v * v;
      }
  const double dn = static_cast<double>(n);
  r.mean.resize(layout.size);
  r.mean_se.assign(layout.size, 0.0);
  double mean_norm2 = 0.0;
  for (std::size_t j = 0; j < layout.size; ++j) {
    r.mean[j] = sum[j] / dn;
    mean_norm2 += r.mean[j] * r.mean[j];
  }
  if (n >= 2) {
    for (std::size_t j = 0; j < layout.size; ++j) {
      const double var_j = std::max(0.0, (sum2[j] - dn * r.mean[j] * r.mean[j]) / (dn - 1.0));
      r.mean_se[j] = std::sqrt(var_j / dn);
    }
    // d_k = |g_k - mean|^2, computed sparsely.
    double dsum = 0.0, dsum2 = 0.0;
    for (const auto& ws : samples)
      for (const auto& s : ws) {
        double d = mean_norm2;
        for (auto [j, v] : s) d += (v - r.mean[j]) * (v - r.mean[j]) - r.mean[j] * r.mean[j];
        dsum += d;
        dsum2 += d * d;
      }
    r.variance = dsum / (dn - 1.0);
    const double dmean = dsum / dn;
    const double dvar = std::max(0.0, (dsum2 - dn * dmean * dmean) / (dn - 1.0));
    r.variance_se = std::sqrt(dvar / dn) * dn / (dn - 1.0);
  }
  return r;
}

}  // namespace dcl
