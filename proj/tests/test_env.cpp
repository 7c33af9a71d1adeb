#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "arpex/random.hpp"
#include "arpex/square_env.hpp"

using namespace arpex;

TEST_CASE("reset") {
  SquareEnv env(10.0);
  Rng rng(7);
  VectorXd obs = env.reset(rng);
  SECTION("target lies on the circle of radius 2.5") {
    CHECK(env.target().norm() == Catch::Approx(2.5).margin(1e-12));
  }
  SECTION("starts centered with zero velocity") {
    CHECK(obs.size() == 6);
    CHECK(obs(0) == 0.0);
    CHECK(obs(1) == 0.0);
    CHECK(obs(2) == 0.0);
    CHECK(obs(3) == 0.0);
    CHECK(obs(4) == env.target()(0));
    CHECK(obs(5) == env.target()(1));
  }
  SECTION("seeded target regression") {
    CHECK(env.target()(0) == Catch::Approx(0.06887548067597332).margin(1e-12));
    CHECK(env.target()(1) == Catch::Approx(-2.49905105353245105).margin(1e-12));
  }
}

TEST_CASE("step kinematics") {
  SquareEnv env(10.0);
  env.reset(std::uint64_t{3});
  SECTION("zero action leaves the position, reward is -dt") {
    auto r = env.step(VectorXd::Zero(2));
    CHECK(env.pos().isZero(0.0));
    CHECK(r.reward == -env.dt());
    CHECK_FALSE(r.done);
  }
  SECTION("actions are clipped to [-1, 1]") {
    VectorXd a(2);
    a << 5.0, -3.0;
    env.step(a);
    CHECK(env.vel()(0) == 1.0);
    CHECK(env.vel()(1) == -1.0);
    CHECK(env.pos()(0) == Catch::Approx(0.1).margin(1e-15));
    CHECK(env.pos()(1) == Catch::Approx(-0.1).margin(1e-15));
  }
  SECTION("walls clamp the position") {
    env.set_target_for_test({-2.5, 0.0});  // keep the goal out of the path
    VectorXd right(2);
    right << 1.0, 0.0;
    for (int i = 0; i < 60; ++i) env.step(right);
    CHECK(env.pos()(0) == 5.0);
    env.step(right);
    CHECK(env.pos()(0) == 5.0);  // stuck at the boundary
  }
  SECTION("observation layout tracks the state") {
    VectorXd a(2);
    a << 0.5, -0.25;
    auto r = env.step(a);
    CHECK(r.obs(0) == env.pos()(0));
    CHECK(r.obs(1) == env.pos()(1));
    CHECK(r.obs(2) == 0.5);
    CHECK(r.obs(3) == -0.25);
    CHECK(r.obs(4) == env.target()(0) - env.pos()(0));
    CHECK(r.obs(5) == env.target()(1) - env.pos()(1));
  }
}

TEST_CASE("goal termination and episode return") {
  SquareEnv env(10.0);
  env.reset(std::uint64_t{11});
  const Eigen::Vector2d target = env.target();
  double ret = 0.0;
  int steps = 0;
  while (true) {
    const Eigen::Vector2d to_target = target - env.pos();
    VectorXd a(2);
    a << to_target(0), to_target(1);  // clipped to unit box by the env
    auto r = env.step(a);
    ret += r.reward;
    ++steps;
    if (r.done) {
      CHECK_FALSE(r.timeout);
      break;
    }
    REQUIRE(steps < 1000);
  }
  CHECK((env.pos() - target).norm() < SquareEnv::kDoneDist);
  // return equals negative elapsed time
  CHECK(ret == Catch::Approx(-env.elapsed()).margin(1e-12));
  CHECK(env.elapsed() == Catch::Approx(steps * env.dt()).margin(0.0));
  SECTION("stepping a finished episode throws") {
    CHECK_THROWS_AS(env.step(VectorXd::Zero(2)), std::logic_error);
  }
}

TEST_CASE("timeout termination at the episode cap") {
  SquareEnv env(0.01);  // dt = 100 s: cap reached after 10 steps
  env.reset(std::uint64_t{5});
  StepResult r;
  for (int i = 0; i < 10; ++i) {
    REQUIRE_FALSE(env.done());
    r = env.step(VectorXd::Zero(2));
  }
  CHECK(r.done);
  CHECK(r.timeout);
  CHECK(env.elapsed() == Catch::Approx(1000.0).margin(1e-9));
}

TEST_CASE("immediate-done edge with the target at the start position") {
  SquareEnv env(100.0);
  env.reset(std::uint64_t{1});
  env.set_target_for_test({0.0, 0.0});
  auto r = env.step(VectorXd::Zero(2));
  CHECK(r.done);
  CHECK_FALSE(r.timeout);
  CHECK(env.elapsed() == Catch::Approx(env.dt()).margin(0.0));
}

TEST_CASE("determinism across identical seeds") {
  SquareEnv a(25.0), b(25.0);
  Rng ra(123), rb(123);
  a.reset(ra);
  b.reset(rb);
  REQUIRE(a.target() == b.target());
  Rng act(9);
  for (int i = 0; i < 200 && !a.done(); ++i) {
    VectorXd u(2);
    u << act.normal(), act.normal();
    auto sa = a.step(u);
    auto sb = b.step(u);
    REQUIRE(sa.obs == sb.obs);
    REQUIRE(sa.reward == sb.reward);
    REQUIRE(sa.done == sb.done);
  }
}

TEST_CASE("history wrapper") {
  SECTION("initial state holds p copies of (s_0, zero action)") {
    HistoryWrapper w(SquareEnv(10.0), 3);
    Rng rng(2);
    const VectorXd obs0 = w.reset(rng);
    const ExtendedState& s = w.state();
    CHECK(s.t() == 0);
    CHECK(s.effective_entries() == 0);
    for (int k = 0; k < 3; ++k) {
      CHECK(s.entry(k).obs == obs0);
      CHECK(s.entry(k).action.isZero(0.0));
    }
  }
  SECTION("rewards pass through unchanged") {
    HistoryWrapper w(SquareEnv(10.0), 3);
    SquareEnv raw(10.0);
    Rng r1(31), r2(31);
    w.reset(r1);
    raw.reset(r2);
    Rng act(5);
    double sum_wrapped = 0.0, sum_raw = 0.0;
    for (int i = 0; i < 300; ++i) {
      VectorXd u(2);
      u << act.normal(), act.normal();
      auto rw = w.step(u);
      auto rr = raw.step(u);
      sum_wrapped += rw.reward;
      sum_raw += rr.reward;
      REQUIRE(rw.done == rr.done);
      REQUIRE(rw.obs == rr.obs);
      if (rw.done) break;
    }
    CHECK(sum_wrapped == sum_raw);
  }
  SECTION("history contains the last p pairs in order") {
    HistoryWrapper w(SquareEnv(10.0), 3);
    Rng rng(4);
    VectorXd prev = w.reset(rng);
    std::vector<VectorXd> seen_obs, seen_act;
    for (int i = 0; i < 3; ++i) {
      VectorXd a = VectorXd::Constant(2, 0.1 * (i + 1));
      seen_obs.push_back(prev);
      seen_act.push_back(a);
      prev = w.step(a).obs;
    }
    const ExtendedState& s = w.state();
    CHECK(s.effective_entries() == 3);
    for (int k = 0; k < 3; ++k) {
      // entry(0) is the most recent pair
      CHECK(s.entry(k).obs == seen_obs[2 - k]);
      CHECK(s.entry(k).action == seen_act[2 - k]);
    }
    CHECK(s.current() == prev);
  }
}
