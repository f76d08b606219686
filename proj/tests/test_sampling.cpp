#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "common.hpp"
#include "dcl/builtin.hpp"
#include "dcl/sampling.hpp"

using namespace dcl;

TEST(Rollout, DeterministicPerSeed) {
  const auto m = builtin::dectiger(4);
  const auto p = random_policy(m, HistoryView::full(), 1);
  for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
    const auto a = rollout(m, p, seed), b = rollout(m, p, seed);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t k = 0; k < a.steps.size(); ++k) {
      EXPECT_EQ(a.steps[k].state, b.steps[k].state);
      EXPECT_EQ(a.steps[k].action, b.steps[k].action);
      EXPECT_EQ(a.steps[k].observation, b.steps[k].observation);
    }
    EXPECT_EQ(a.discounted_return, b.discounted_return);
  }
  EXPECT_EQ(kRngAlgorithm, "mt19937_64+splitmix64");
}

TEST(Rollout, BeverageHasOneStep) {
  const auto m = builtin::beverage();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto tr = rollout(m, uniform_policy(m), seed);
    ASSERT_EQ(tr.steps.size(), 1u);
    EXPECT_EQ(std::abs(tr.discounted_return), 1.0);
  }
}

TEST(Rollout, DecTigerOpeningEndsEpisode) {
  const auto m = builtin::dectiger(4);
  const auto p = builtin::dectiger_listen_open(m);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto tr = rollout(m, p, seed);
    ASSERT_LE(tr.steps.size(), 4u);
    for (std::size_t k = 0; k + 1 < tr.steps.size(); ++k) EXPECT_EQ(tr.steps[k].action, 0u);
    if (tr.steps.size() < 4) {
      EXPECT_TRUE(tr.terminal);
      EXPECT_EQ(tr.steps.back().next, m.state_index("done"));
    }
  }
}

TEST(Rollout, ObservationFrequencyMatchesModel) {
  const auto m = builtin::dectiger(3);
  const auto p = builtin::dectiger_listen_always(m);
  const auto hl = m.joint_observation({"hear-left", "hear-left"});
  const auto tl = m.state_index("tiger-left");
  Rng rng(99);
  const auto abs = absorbing_states(m);
  std::size_t n = 0, hits = 0;
  for (int k = 0; k < 100000; ++k) {
    const auto tr = rollout(m, p, rng, abs);
    if (tr.steps[0].state != tl) continue;
    ++n;
    hits += tr.steps[0].observation == hl;
  }
  const double f = static_cast<double>(hits) / static_cast<double>(n);
  const double sigma = std::sqrt(0.7225 * 0.2775 / static_cast<double>(n));
  EXPECT_LE(std::abs(f - 0.7225), 3 * sigma) << f;
}

TEST(SamplePoint, FrequenciesMatchVisitation) {
  struct C {
    DecPomdpModel m;
    TabularJointPolicy p;
    ReturnConvention r;
  };
  auto tiger = builtin::dectiger(3);
  auto discounted = builtin::dectiger(3);
  discounted.discount = 0.6;
  const std::vector<C> cases = {
      {tiger, builtin::dectiger_listen_open(tiger), ReturnConvention::to_go},
      {discounted, builtin::dectiger_listen_open(discounted), ReturnConvention::to_go},
      {discounted, builtin::dectiger_listen_open(discounted), ReturnConvention::episode},
  };
  for (const auto& c : cases) {
    ExactOptions o;
    o.returns = c.r;
    const auto x = analyze(c.m, c.p, o);
    const std::size_t N = 1'000'000;
    std::vector<double> count(x.enumeration.num_entries(), 0.0);
    Rng rng(7);
    const auto abs = absorbing_states(c.m);
    for (std::size_t k = 0; k < N; ++k) {
      const auto pt = sample_point(c.m, c.p, rng, abs, c.r);
      const auto node = x.enumeration.find(pt.history);
      ASSERT_TRUE(node.has_value());
      count[find_entry(x, *node, pt.state)] += 1.0;
    }
    for (std::size_t e = 0; e < count.size(); ++e) {
      const double rho = x.visitation.rho[e];
      const double sigma = std::sqrt(rho * (1 - rho) / static_cast<double>(N));
      EXPECT_LE(std::abs(count[e] / N - rho), 4 * sigma + 1e-12) << "entry " << e;
    }
  }
}

TEST(McGradient, BeverageStateCriticWeight) {
  const auto m = builtin::beverage();
  const auto p = uniform_policy(m);
  const auto x = analyze(m, p);
  const auto L = make_layout(m, p);
  SamplePoint pt;
  pt.state = m.state_index("coffee");
  pt.action = m.action_index(0, "serve-tea");
  const auto s = mc_gradient(x, L, CriticKind::S, pt);
  EXPECT_EQ(s.weight, -1.0);
  EXPECT_EQ(s.gradient[L.offset(0, {}) + pt.action], -2.0);  // W / pi = -1 / 0.5
  EXPECT_EQ(s.gradient[L.offset(0, {})], 0.0);
  EXPECT_EQ(mc_gradient(x, L, CriticKind::H, pt).weight, 0.0);
}

TEST(McGradient, HistoryStateMinusHistoryHasZeroMean) {
  const auto m = builtin::dectiger(3);
  const auto p = random_policy(m, HistoryView::full(), 2);
  const auto x = analyze(m, p);
  const auto L = make_layout(m, p);
  Rng rng(5);
  const auto abs = absorbing_states(m);
  const std::size_t N = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    const auto pt = sample_point(m, p, rng, abs);
    const double d = mc_gradient(x, L, CriticKind::HS, pt).weight - mc_gradient(x, L, CriticKind::H, pt).weight;
    sum += d;
    sum2 += d * d;
  }
  const double mean = sum / N, se = std::sqrt((sum2 / N - mean * mean) / N);
  EXPECT_LE(std::abs(mean), 4 * se);
}

TEST(McGradient, ZeroProbabilityActionIsDegenerate) {
  const auto m = builtin::beverage();
  auto p = uniform_policy(m, HistoryView::full());
  p.agents[0].set({}, {1.0, 0.0});
  const auto x = analyze(m, p);
  SamplePoint pt;
  pt.action = m.action_index(0, "serve-tea");
  EXPECT_THROW(mc_gradient(x, make_layout(m, p), CriticKind::H, pt), DegenerateScoreError);
}

TEST(Moments, MeanMatchesExactGradient) {
  const auto m = builtin::dectiger(3);
  const auto p = builtin::dectiger_listen_open(m);
  const auto x = analyze(m, p);
  const auto L = make_layout(m, p);
  for (auto kind : {CriticKind::H, CriticKind::S, CriticKind::HS}) {
    const auto g = exact_gradient(x, kind, L);
    const auto em = empirical_moments(x, L, kind, 100000, 11, 4);
    for (std::size_t j = 0; j < L.size; ++j) {
      if (em.mean_se[j] == 0.0) EXPECT_NEAR(em.mean[j], g.gradient[j], 1e-12);
      else EXPECT_LE(std::abs(em.mean[j] - g.gradient[j]), 4 * em.mean_se[j]) << to_string(kind) << " " << j;
    }
    ASSERT_TRUE(em.variance.has_value());
    EXPECT_LE(std::abs(*em.variance - g.variance), 4 * *em.variance_se) << to_string(kind);
  }
}

TEST(Moments, SingleSampleHasNoVariance) {
  const auto m = builtin::beverage();
  const auto x = analyze(m, uniform_policy(m));
  const auto em = empirical_moments(x, make_layout(m, x.policy), CriticKind::S, 1, 3);
  EXPECT_FALSE(em.variance.has_value());
  EXPECT_EQ(em.mean.size(), 2u);
}

TEST(Moments, DeterministicForSeedAndThreads) {
  const auto m = builtin::meetgrid3(4);
  const auto p = uniform_policy(m);
  const auto x = analyze(m, p);
  const auto L = make_layout(m, p);
  const auto a = empirical_moments(x, L, CriticKind::S, 5000, 21, 3);
  const auto b = empirical_moments(x, L, CriticKind::S, 5000, 21, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(*a.variance, *b.variance);
  const auto c = empirical_moments(x, L, CriticKind::S, 5000, 22, 3);
  EXPECT_NE(a.mean, c.mean);
}

TEST(Rng, SplitStreamsDiffer) {
  const Rng root(4);
  auto a = root.split(0), b = root.split(1), a2 = root.split(0);
  const auto va = a.next();
  EXPECT_NE(va, b.next());
  EXPECT_EQ(va, a2.next());
}
