// Exact values, bias and gradient variances for Dec-Tiger under the listen-then-open policy.
#include <cstdio>

#include "dcl/builtin.hpp"
#include "dcl/exact.hpp"

int main() {
  using namespace dcl;
  const auto m = builtin::dectiger(3);
  const auto p = builtin::dectiger_listen_open(m);
  ExactOptions opt;
  opt.returns = ReturnConvention::episode;
  const auto x = analyze(m, p, opt);

  const auto ll = m.joint_action({"listen", "listen"});
  const auto h = find_history(x, "listen,listen/hear-right,hear-right");
  std::printf("J = %.6f\n", x.values.expected_return);
  std::printf("Q(h, listen) = %.4f   E_s Q(s, listen) = %.4f\n", x.values.ha(h, ll), x.values.es_sa(h, ll));

  const auto b = bias_report(x);
  std::printf("max |bias| = %.4f\n", b.max_abs_bias);
  for (auto k : {CriticKind::H, CriticKind::S, CriticKind::HS})
    std::printf("Var[g_%s] = %.4f\n", to_string(k).c_str(), gradient_variance(x, k));
}
