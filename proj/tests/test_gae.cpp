#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "arpex/gae.hpp"
#include "arpex/random.hpp"

using namespace arpex;

namespace {

// Independent brute-force oracle: A_t = sum_{l>=t, same episode} (gamma*lambda)^(l-t) delta_l.
VectorXd brute_force_gae(const VectorXd& rewards, const VectorXd& values,
                         const VectorXd& next_values,
                         const std::vector<std::uint8_t>& done, double gamma,
                         double lambda) {
  const Eigen::Index n = rewards.size();
  VectorXd adv(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double acc = 0.0;
    double w = 1.0;
    for (Eigen::Index l = t; l < n; ++l) {
      const double delta =
          rewards(l) + gamma * next_values(l) - values(l);
      acc += w * delta;
      if (done[l]) break;
      w *= gamma * lambda;
    }
    adv(t) = acc;
  }
  return adv;
}

struct RandomBatch {
  VectorXd rewards, values, next_values;
  std::vector<std::uint8_t> done;
};

RandomBatch random_batch(Rng& rng, int n) {
  RandomBatch b;
  b.rewards.resize(n);
  b.values.resize(n);
  b.next_values.resize(n);
  b.done.assign(n, 0);
  for (int t = 0; t < n; ++t) {
    b.rewards(t) = rng.normal();
    b.values(t) = rng.normal();
    b.done[t] = rng.uniform() < 0.08 ? 1 : 0;
  }
  for (int t = 0; t < n; ++t) {
    if (b.done[t]) {
      // goal terminal or bootstrapped timeout, split randomly
      b.next_values(t) = rng.uniform() < 0.5 ? 0.0 : rng.normal();
    } else if (t + 1 < n) {
      b.next_values(t) = b.values(t + 1);
    } else {
      b.next_values(t) = rng.normal();  // truncation bootstrap
    }
  }
  return b;
}

}  // namespace

TEST_CASE("lambda = 1 reduces to discounted return minus value") {
  const double gamma = 0.9;
  const int n = 12;
  Rng rng(3);
  VectorXd rewards(n), values(n), next_values(n);
  std::vector<std::uint8_t> done(n, 0);
  for (int t = 0; t < n; ++t) {
    rewards(t) = rng.normal();
    values(t) = rng.normal();
  }
  done[n - 1] = 1;  // one full episode, terminal at the end
  for (int t = 0; t + 1 < n; ++t) next_values(t) = values(t + 1);
  next_values(n - 1) = 0.0;

  auto out = gae_advantages(rewards, values, next_values, done, gamma, 1.0);
  for (int t = 0; t < n; ++t) {
    double g = 0.0;
    for (int l = n - 1; l >= t; --l) g = rewards(l) + gamma * g;
    CHECK(out.advantages(t) == Catch::Approx(g - values(t)).margin(1e-10));
  }
}

TEST_CASE("single-step episode: advantage is r - V(s)") {
  VectorXd rewards(1), values(1), next_values(1);
  rewards << -0.5;
  values << 0.3;
  next_values << 0.0;
  auto out = gae_advantages(rewards, values, next_values, {1}, 0.99, 0.95);
  CHECK(out.advantages(0) == Catch::Approx(-0.8).margin(1e-12));
  CHECK(out.value_targets(0) == Catch::Approx(-0.5).margin(1e-12));
}

TEST_CASE("recursion matches the brute-force double sum") {
  Rng rng(2025);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform() * 60);
    auto b = random_batch(rng, n);
    const double gamma = 0.9 + 0.099 * rng.uniform();
    const double lambda = 0.9 + 0.099 * rng.uniform();
    auto fast =
        gae_advantages(b.rewards, b.values, b.next_values, b.done, gamma, lambda);
    auto slow = brute_force_gae(b.rewards, b.values, b.next_values, b.done,
                                gamma, lambda);
    for (int t = 0; t < n; ++t)
      REQUIRE(fast.advantages(t) == Catch::Approx(slow(t)).margin(1e-10));
  }
}

TEST_CASE("advantage normalization") {
  Rng rng(4);
  VectorXd adv(1000);
  for (int i = 0; i < 1000; ++i) adv(i) = 3.0 + 2.5 * rng.normal();
  normalize_advantages(adv);
  CHECK(std::abs(adv.mean()) < 1e-12);
  CHECK(adv.squaredNorm() / adv.size() == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("explained variance") {
  VectorXd targets(4), values(4);
  targets << 1.0, 2.0, 3.0, 4.0;
  CHECK(explained_variance(targets, targets) == Catch::Approx(1.0));
  values << 2.5, 2.5, 2.5, 2.5;  // predicting the mean explains nothing
  CHECK(explained_variance(values, targets) == Catch::Approx(0.0).margin(1e-12));
}
