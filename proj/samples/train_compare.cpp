// Trains state, history and history-state critics on Dec-Tiger over a few seeds.
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "dcl/builtin.hpp"
#include "dcl/train.hpp"

int main(int argc, char** argv) {
  using namespace dcl;
  const int seeds = argc > 1 ? std::atoi(argv[1]) : 5;
  const auto m = builtin::dectiger(3);
  for (auto kind : {CriticKind::S, CriticKind::H, CriticKind::HS}) {
    double sum = 0.0, sum2 = 0.0;
    for (int s = 1; s <= seeds; ++s) {
      TrainConfig cfg;
      cfg.critic = kind;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.eval_interval = cfg.episodes;
      const double j = evaluate_policy_exact(m, train(m, cfg).actor.policy);
      sum += j;
      sum2 += j * j;
    }
    const double mean = sum / seeds;
    const double se = seeds > 1 ? std::sqrt((sum2 - seeds * mean * mean) / (seeds - 1) / seeds) : 0.0;
    std::printf("%-2s critic: final J = %8.3f +- %.3f\n", to_string(kind).c_str(), mean, se);
  }
}
