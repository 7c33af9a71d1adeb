#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "arpex/trainer.hpp"

using namespace arpex;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 256;
  cfg.opt_batch = 64;
  cfg.opt_epochs = 3;
  return cfg;
}

Mlp make_value_net(const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes{SquareEnv::kObsDim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  Mlp net(sizes);
  net.init_uniform(rng);
  return net;
}

}  // namespace

TEST_CASE("config") {
  SECTION("defaults follow the reference setup") {
    TrainConfig cfg;
    CHECK(cfg.batch_size == 8192);
    CHECK(cfg.opt_batch == 256);
    CHECK(cfg.opt_epochs == 10);
    CHECK(cfg.step_size == 4e-3);
    CHECK(cfg.gamma == 0.995);
    CHECK(cfg.lambda == 0.995);
    CHECK(cfg.clip_eps == 0.2);
    CHECK(cfg.hidden == std::vector<int>{64, 64});
  }
  SECTION("batch sizes scale with the action rate") {
    TrainConfig cfg;
    auto scaled = cfg.scaled_for_rate(100.0);
    CHECK(scaled.batch_size == 81920);
    CHECK(scaled.opt_batch == 2560);
    auto down = cfg.scaled_for_rate(5.0);
    CHECK(down.batch_size == 4096);
    CHECK(down.opt_batch == 128);
  }
  SECTION("key-value parsing") {
    TrainConfig cfg;
    cfg.set("gamma", "0.9");
    cfg.set("hidden", "32,16");
    CHECK(cfg.gamma == 0.9);
    CHECK(cfg.hidden == std::vector<int>{32, 16});
    CHECK_THROWS_AS(cfg.set("bogus", "1"), std::invalid_argument);
  }
}

TEST_CASE("zero optimization epochs leave parameters unchanged") {
  Rng init(1);
  PolicyHead head = PolicyHead::initialized(6, 2, {16}, init);
  Mlp value = make_value_net({16}, init);
  auto cfg = small_config();
  cfg.opt_epochs = 0;
  cfg.hidden = {16};
  HistoryWrapper env(SquareEnv(10.0), 3);
  ArPolicy policy(head, ArModel::binomial(3, 0.8));
  PpoTrainer trainer(head, policy, value, env, cfg, 99);
  const VectorXd head_before = head.get_params();
  const VectorXd value_before = value.params();
  trainer.iterate();
  CHECK(head.get_params() == head_before);
  CHECK(value.params() == value_before);
}

TEST_CASE("collection basics") {
  Rng init(2);
  PolicyHead head = PolicyHead::zero(6, 2, {16});
  Mlp value = make_value_net({16}, init);
  auto cfg = small_config();
  HistoryWrapper env(SquareEnv(10.0), 3);
  ArPolicy policy(head, ArModel::binomial(3, 0.8));
  PpoTrainer trainer(head, policy, value, env, cfg, 7);
  auto& batch = trainer.collect();
  SECTION("every reward is -dt") {
    for (int i = 0; i < batch.size; ++i)
      CHECK(batch.rewards(i) == -env.env().dt());
  }
  SECTION("simulated time accounting") {
    CHECK(trainer.sim_seconds() == Catch::Approx(256 * 0.1).margin(1e-12));
  }
}

TEST_CASE("a full reference batch completes episodes at 10 Hz") {
  Rng init(77);
  PolicyHead head = PolicyHead::initialized(6, 2, {64, 64}, init);
  Mlp value({6, 64, 64, 1});
  value.init_uniform(init);
  TrainConfig cfg;  // reference 8192-step batch
  HistoryWrapper env(SquareEnv(10.0), 3);
  ArPolicy policy(head, ArModel::binomial(3, 0.8));
  PpoTrainer trainer(head, policy, value, env, cfg, 3141);
  auto& batch = trainer.collect();
  CHECK(batch.completed_returns.size() >= 1);
  for (double r : batch.completed_returns) CHECK(r <= 0.0);
}

TEST_CASE("identical seeds give bit-identical batches") {
  auto run = [](std::uint64_t seed) {
    Rng init(3);
    PolicyHead head = PolicyHead::initialized(6, 2, {16}, init);
    Mlp value = make_value_net({16}, init);
    HistoryWrapper env(SquareEnv(10.0), 3);
    ArPolicy policy(head, ArModel::binomial(3, 0.8));
    PpoTrainer trainer(head, policy, value, env, small_config(), seed);
    auto& b = trainer.collect();
    return std::make_tuple(MatrixXd(b.actions), VectorXd(b.log_probs),
                           VectorXd(b.rewards));
  };
  auto [a1, l1, r1] = run(42);
  auto [a2, l2, r2] = run(42);
  REQUIRE(a1 == a2);
  REQUIRE(l1 == l2);
  REQUIRE(r1 == r2);
}

TEST_CASE("recomputed log-probs match collection before any update") {
  Rng init(4);
  PolicyHead head = PolicyHead::initialized(6, 2, {16}, init);
  Mlp value = make_value_net({16}, init);
  HistoryWrapper env(SquareEnv(10.0), 3);
  SECTION("alpha = 0: drift below 1e-12") {
    ArPolicy policy(head, ArModel::binomial(3, 0.0));
    PpoTrainer trainer(head, policy, value, env, small_config(), 5);
    auto diag = trainer.iterate();
    CHECK(diag.logp_drift < 1e-12);
  }
  SECTION("alpha > 0, fresh parameters: cached equals recomputed") {
    ArPolicy policy(head, ArModel::binomial(3, 0.8));
    PpoTrainer trainer(head, policy, value, env, small_config(), 5);
    auto diag = trainer.iterate();
    CHECK(diag.logp_drift < 1e-12);
  }
}

TEST_CASE("alpha=0 pipeline equals the plain Gaussian pipeline") {
  auto make_head = [] {
    Rng init(31);
    return PolicyHead::initialized(6, 2, {16, 16}, init);
  };
  auto make_value = [] {
    Rng init(32);
    return make_value_net({16, 16}, init);
  };
  auto cfg = small_config();
  cfg.hidden = {16, 16};

  PolicyHead head_a = make_head();
  Mlp value_a = make_value();
  HistoryWrapper env_a(SquareEnv(10.0), 3);
  ArPolicy arp(head_a, ArModel::binomial(3, 0.0));
  PpoTrainer trainer_a(head_a, arp, value_a, env_a, cfg, 77);

  PolicyHead head_g = make_head();
  Mlp value_g = make_value();
  HistoryWrapper env_g(SquareEnv(10.0), 0);
  GaussianPolicy gauss(head_g);
  PpoTrainer trainer_g(head_g, gauss, value_g, env_g, cfg, 77);

  REQUIRE(head_a.get_params() == head_g.get_params());

  for (int iter = 0; iter < 2; ++iter) {
    auto& batch_a = trainer_a.collect();
    auto& batch_g = trainer_g.collect();
    if (iter == 0) {
      // identical parameters: the sampling path agrees bit for bit
      REQUIRE(batch_a.actions == batch_g.actions);
      REQUIRE(batch_a.log_probs == batch_g.log_probs);
    } else {
      // after an update the parameters agree to round-off, not exactly
      REQUIRE((batch_a.actions - batch_g.actions).cwiseAbs().maxCoeff() <
              1e-10);
      REQUIRE((batch_a.log_probs - batch_g.log_probs).cwiseAbs().maxCoeff() <
              1e-10);
    }
    REQUIRE(batch_a.rewards == batch_g.rewards);
    auto diag_a = trainer_a.update(batch_a);
    auto diag_g = trainer_g.update(batch_g);
    CHECK(diag_a.policy_loss ==
          Catch::Approx(diag_g.policy_loss).margin(1e-10));
    CHECK(diag_a.value_loss == Catch::Approx(diag_g.value_loss).margin(1e-10));
    const VectorXd pa = head_a.get_params(), pg = head_g.get_params();
    CHECK((pa - pg).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((value_a.params() - value_g.params()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("timeout steps bootstrap from the value of the next state") {
  Rng init(6);
  PolicyHead head = PolicyHead::zero(6, 2, {8});
  Mlp value = make_value_net({8}, init);  // nonzero value net
  auto cfg = small_config();
  cfg.batch_size = 64;
  // dt = 50 s: the 1000 s cap lands every 20 steps
  HistoryWrapper env(SquareEnv(0.02), 1);
  ArPolicy policy(head, ArModel::binomial(1, 0.0));
  PpoTrainer trainer(head, policy, value, env, cfg, 9);
  auto& batch = trainer.collect();
  int timeouts = 0;
  for (int i = 0; i < batch.size; ++i) {
    if (batch.timeout[i]) {
      ++timeouts;
      CHECK(batch.done[i] == 1);
      CHECK(batch.next_values(i) != 0.0);  // bootstrapped, not terminal
    } else if (batch.done[i]) {
      CHECK(batch.next_values(i) == 0.0);
    }
  }
  CHECK(timeouts >= 2);
}

TEST_CASE("surrogate gradient matches finite differences at ratio 1") {
  Rng rng(271);
  PolicyHead head = PolicyHead::initialized(3, 2, {6}, rng);
  head.set_log_std(VectorXd::Constant(2, 0.1));
  auto model = ArModel::binomial(2, 0.6);
  ArPolicy policy(head, model);

  const int b = 8;
  PolicyBatch mb;
  mb.order = 2;
  mb.obs = MatrixXd::NullaryExpr(3, b * 3, [&](Eigen::Index, Eigen::Index) {
    return rng.normal();
  });
  mb.hist_actions =
      MatrixXd::NullaryExpr(2, b * 2, [&](Eigen::Index, Eigen::Index) {
        return rng.normal();
      });
  mb.coeffs.resize(2, b);
  for (int i = 0; i < b; ++i) {
    mb.coeffs(0, i) = model.coeffs()[0];
    mb.coeffs(1, i) = i % 2 == 0 ? model.coeffs()[1] : 0.0;  // truncation mix
  }
  mb.actions = MatrixXd::NullaryExpr(2, b, [&](Eigen::Index, Eigen::Index) {
    return rng.normal();
  });

  PolicyEval eval;
  policy.eval_log_probs(mb, eval);
  const VectorXd logp_old = eval.log_probs;  // ratio = 1 at the current theta
  VectorXd adv(b);
  for (int i = 0; i < b; ++i) adv(i) = rng.normal();

  const double eps = 0.2;
  auto surrogate = [&]() {
    PolicyEval e;
    policy.eval_log_probs(mb, e);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
      const double ratio = std::exp(e.log_probs(i) - logp_old(i));
      const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
      loss -= std::min(ratio * adv(i), clipped * adv(i)) / b;
    }
    return loss;
  };

  // analytic gradient at ratio = 1: the unclipped branch is active everywhere
  VectorXd weights(b);
  for (int i = 0; i < b; ++i) weights(i) = -adv(i) / b;
  VectorXd analytic = VectorXd::Zero(head.param_count());
  policy.backward_log_probs(mb, eval, weights, analytic);

  VectorXd params = head.get_params();
  double max_rel = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < head.param_count(); ++i) {
    const double saved = params(i);
    params(i) = saved + h;
    head.set_params(params);
    const double up = surrogate();
    params(i) = saved - h;
    head.set_params(params);
    const double down = surrogate();
    params(i) = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic(i)), std::abs(fd), 1e-7});
    max_rel = std::max(max_rel, std::abs(analytic(i) - fd) / denom);
  }
  head.set_params(params);
  CHECK(max_rel < 1e-3);
}

TEST_CASE("diagnostics are sane after updates") {
  Rng init(8);
  PolicyHead head = PolicyHead::initialized(6, 2, {16}, init);
  Mlp value = make_value_net({16}, init);
  HistoryWrapper env(SquareEnv(10.0), 3);
  ArPolicy policy(head, ArModel::binomial(3, 0.8));
  PpoTrainer trainer(head, policy, value, env, small_config(), 13);
  for (int i = 0; i < 3; ++i) {
    auto diag = trainer.iterate();
    CHECK(std::isfinite(diag.kl));
    CHECK(diag.clip_fraction >= 0.0);
    CHECK(diag.clip_fraction <= 1.0);
    CHECK(std::isfinite(diag.policy_loss));
    CHECK(std::isfinite(diag.value_loss));
    CHECK(diag.explained_var <= 1.0);
  }
}
