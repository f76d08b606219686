#include <gtest/gtest.h>

#include <string>

#include "common.hpp"
#include "dcl/builtin.hpp"
#include "dcl/model.hpp"

using namespace dcl;

TEST(Model, BuiltinsValidate) {
  for (auto name : kBuiltinModels) EXPECT_TRUE(validate(builtin_model(name)).empty()) << name;
}

TEST(Model, UnknownBuiltinNamesValidIdentifiers) {
  try {
    builtin_model("tiger");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    for (auto name : kBuiltinModels) EXPECT_NE(msg.find(name), std::string::npos) << msg;
  }
  EXPECT_THROW(builtin_policy("greedy", builtin::beverage()), Error);
}

TEST(Model, DecTigerRewards) {
  const auto m = builtin::dectiger();
  const auto tl = m.state_index("tiger-left"), tr = m.state_index("tiger-right"), done = m.state_index("done");
  EXPECT_EQ(m.R(tl, m.joint_action({"open-right", "open-right"}), done), 20.0);
  EXPECT_EQ(m.R(tl, m.joint_action({"open-left", "open-right"}), done), -100.0);
  EXPECT_EQ(m.R(tl, m.joint_action({"open-left", "open-left"}), done), -50.0);
  EXPECT_EQ(m.R(tr, m.joint_action({"listen", "open-right"}), done), -101.0);
  EXPECT_EQ(m.R(tr, m.joint_action({"open-left", "listen"}), done), 9.0);
  EXPECT_EQ(m.R(tl, m.joint_action({"listen", "listen"}), tl), -2.0);
  EXPECT_EQ(m.T(tl, m.joint_action({"listen", "listen"}), tl), 1.0);
  EXPECT_EQ(m.T(tr, m.joint_action({"listen", "open-left"}), done), 1.0);
  EXPECT_EQ(m.initial[tl], 0.5);
  EXPECT_EQ(m.discount, 1.0);
}

TEST(Model, DecTigerObservations) {
  const auto m = builtin::dectiger();
  const auto ll = m.joint_action({"listen", "listen"});
  const auto tl = m.state_index("tiger-left");
  EXPECT_NEAR(m.O(ll, tl, m.joint_observation({"hear-left", "hear-left"})), 0.7225, 1e-15);
  EXPECT_NEAR(m.O(ll, tl, m.joint_observation({"hear-left", "hear-right"})), 0.1275, 1e-15);
  EXPECT_NEAR(m.O(ll, tl, m.joint_observation({"hear-right", "hear-right"})), 0.0225, 1e-15);
  for (StateIndex n = 0; n < m.num_states(); ++n)
    for (JointActionIndex a = 0; a < m.num_joint_actions(); ++a) {
      double sum = 0.0;
      for (JointObservationIndex o = 0; o < 4; ++o) sum += m.O(a, n, o);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Model, DecTigerTerminalIsAbsorbing) {
  const auto m = builtin::dectiger();
  const auto abs = absorbing_states(m);
  EXPECT_FALSE(abs[0]);
  EXPECT_FALSE(abs[1]);
  EXPECT_TRUE(abs[m.state_index("done")]);
}

TEST(Model, Beverage) {
  const auto m = builtin::beverage();
  EXPECT_EQ(m.num_agents(), 1u);
  EXPECT_EQ(m.horizon, 1);
  const auto coffee = m.state_index("coffee"), tea = m.state_index("tea");
  const auto serve_tea = m.action_index(0, "serve-tea");
  EXPECT_EQ(m.R(coffee, serve_tea, coffee), -1.0);
  EXPECT_EQ(m.R(tea, serve_tea, tea), 1.0);
}

TEST(Model, MeetGrid) {
  const auto m = builtin::meetgrid3();
  EXPECT_EQ(m.num_states(), 81u);
  EXPECT_EQ(m.num_joint_actions(), 25u);
  EXPECT_EQ(m.horizon, 8);
  EXPECT_EQ(m.initial[m.state_index("r0c0-r2c2")], 1.0);
  const auto s = m.state_index("r1c0-r1c2");
  const auto a = m.joint_action({"right", "left"});
  const auto meet = m.state_index("r1c1-r1c1");
  EXPECT_EQ(m.T(s, a, meet), 1.0);
  EXPECT_EQ(m.R(s, a, meet), 1.0);
  EXPECT_EQ(m.O(a, meet, m.joint_observation({"r1c1", "r1c1"})), 1.0);
  // Walls block.
  const auto corner = m.state_index("r0c0-r2c2");
  EXPECT_EQ(m.T(corner, m.joint_action({"up", "down"}), corner), 1.0);
  EXPECT_EQ(m.R(corner, m.joint_action({"up", "down"}), corner), 0.0);
}

TEST(Validate, ScaledTransitionRowIsReportedOnce) {
  auto m = builtin::dectiger();
  const auto tl = m.state_index("tiger-left");
  const auto ll = m.joint_action({"listen", "listen"});
  for (StateIndex n = 0; n < m.num_states(); ++n) m.T(tl, ll, n) *= 0.5;
  const auto rep = validate(m);
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_NE(rep[0].location.find("tiger-left"), std::string::npos) << rep[0].location;
  EXPECT_NE(rep[0].location.find("listen,listen"), std::string::npos) << rep[0].location;
  EXPECT_NE(rep[0].message.find("0.5"), std::string::npos) << rep[0].message;
}

TEST(Validate, HorizonZero) {
  auto m = builtin::beverage();
  m.horizon = 0;
  const auto rep = validate(m);
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_EQ(rep[0].message, "horizon must be >= 1");
}

TEST(Validate, ReportsEveryViolation) {
  auto m = builtin::beverage();
  m.discount = 1.5;
  m.initial = {0.2, 0.2};
  m.O(0, 0, 0) = 0.0;
  const auto rep = validate(m);
  EXPECT_EQ(rep.size(), 3u);
}

TEST(Validate, RandomModelsAreValid) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_TRUE(validate(test::random_model(seed)).empty()) << seed;
}

TEST(Radix, EncodeDecodeRoundTrip) {
  const Radix r({3, 2, 4});
  EXPECT_EQ(r.size(), 24u);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto parts = r.decode(i);
    EXPECT_EQ(r.encode(parts), i);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(r.component(i, d), parts[d]);
  }
  // Agent 0 is the most significant digit.
  EXPECT_EQ(r.encode(std::vector<std::size_t>{1, 0, 0}), 8u);
}

TEST(Model, JointLabels) {
  const auto m = builtin::dectiger();
  const auto a = m.joint_action({"open-left", "listen"});
  EXPECT_EQ(m.joint_action_label(a), "open-left,listen");
  EXPECT_THROW(m.state_index("nowhere"), Error);
}
