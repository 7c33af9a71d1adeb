#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "arpex/gae.hpp"
#include "arpex/mlp.hpp"
#include "arpex/policy.hpp"
#include "arpex/random.hpp"
#include "arpex/square_env.hpp"

namespace arpex {

// PPO hyper-parameters. Batch sizes are defined at the 10 Hz reference rate
// and scale proportionally with the action rate so a batch always covers the
// same amount of simulated time.
struct TrainConfig {
  int batch_size = 8192;
  int opt_batch = 256;
  int opt_epochs = 10;
  double step_size = 4e-3;
  double gamma = 0.995;
  double lambda = 0.995;
  double clip_eps = 0.2;
  std::vector<int> hidden = {64, 64};
  double value_coef = 0.5;
  double grad_clip = 0.5;  // global L2 norm; <= 0 disables clipping
  double ent_coef = 0.0;
  bool state_dependent_std = false;

  static constexpr double kReferenceRateHz = 10.0;

  TrainConfig scaled_for_rate(double rate_hz) const {
    TrainConfig out = *this;
    const double factor = rate_hz / kReferenceRateHz;
    out.batch_size = std::max(1, static_cast<int>(std::lround(batch_size * factor)));
    out.opt_batch = std::max(1, static_cast<int>(std::lround(opt_batch * factor)));
    return out;
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("config: gamma");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("config: lambda");
    if (!(clip_eps > 0.0)) throw std::invalid_argument("config: clip_eps");
    if (batch_size <= 0 || opt_batch <= 0 || opt_epochs < 0)
      throw std::invalid_argument("config: batch sizes");
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "opt_batch") opt_batch = std::stoi(value);
    else if (key == "opt_epochs") opt_epochs = std::stoi(value);
    else if (key == "step_size") step_size = std::stod(value);
    else if (key == "gamma") gamma = std::stod(value);
    else if (key == "lambda") lambda = std::stod(value);
    else if (key == "clip_eps") clip_eps = std::stod(value);
    else if (key == "value_coef") value_coef = std::stod(value);
    else if (key == "grad_clip") grad_clip = std::stod(value);
    else if (key == "ent_coef") ent_coef = std::stod(value);
    else if (key == "state_dependent_std")
      state_dependent_std = value == "1" || value == "true";
    else if (key == "hidden") {
      hidden.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) hidden.push_back(std::stoi(item));
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }

  // Plain key-value file: one "key value" or "key = value" per line,
  // '#' starts a comment.
  static TrainConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    TrainConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      for (char& c : line)
        if (c == '=' || c == ':') c = ' ';
      std::stringstream ss(line);
      std::string key, value;
      if (!(ss >> key)) continue;
      if (!(ss >> value)) throw std::runtime_error("config: missing value for " + key);
      cfg.set(key, value);
    }
    cfg.validate();
    return cfg;
  }
};

// One collected on-policy batch in the flattened layout consumed by the
// policy's batched log-prob evaluation, plus everything GAE needs.
struct RolloutBatch {
  int order = 0;
  int size = 0;
  MatrixXd obs;           // obs_dim x size*(p+1)
  MatrixXd hist_actions;  // act_dim x max(size*p, 1)
  MatrixXd coeffs;        // max(p,1) x size, phi masked to min(p,t)
  MatrixXd actions;       // act_dim x size
  VectorXd log_probs;     // collection-time log pi (cached residuals)
  VectorXd values;        // V(s_t) at collection time
  VectorXd next_values;   // bootstrap values, 0 at goal terminals
  VectorXd rewards;
  std::vector<std::uint8_t> done;     // any episode end (goal or timeout)
  std::vector<std::uint8_t> timeout;  // episode end by the time cap

  std::vector<double> completed_returns;  // per episode finished in this batch
  std::vector<double> completed_lengths;  // simulated seconds
};

struct TrainDiagnostics {
  double sim_seconds = 0.0;   // cumulative across training
  double mean_return = 0.0;   // mean over episodes completed in this batch
  double mean_ep_len = 0.0;   // simulated seconds
  int episodes = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double explained_var = 0.0;
  // mean |log pi(recomputed) - log pi(collected)| on the first minibatch
  // before any step: measures the cached-vs-recomputed residual asymmetry.
  double logp_drift = 0.0;
};

namespace detail {

inline const std::vector<double>* history_coeffs(const ArPolicy& p) {
  return &p.model().coeffs();
}
inline const std::vector<double>* history_coeffs(const GaussianPolicy&) {
  return nullptr;
}

}  // namespace detail

// Clipped-surrogate policy-gradient training over the extended MDP. The
// policy is a Gaussian policy over extended states (ArPolicy, or
// GaussianPolicy as the memoryless baseline); the value function conditions
// on the current original-MDP state only, so its size does not depend on the
// process order. Collection-time log-probs use the residuals cached while
// acting; the optimization recomputes them under the current parameters so
// the gradient flows through every occurrence of mu and sigma.
template <class Policy>
class PpoTrainer {
 public:
  PpoTrainer(PolicyHead& head, const Policy& policy, Mlp& value_net,
             HistoryWrapper& env, TrainConfig config, std::uint64_t seed)
      : head_(&head),
        policy_(&policy),
        value_net_(&value_net),
        env_(&env),
        config_(config),
        rng_(seed),
        adam_(head.param_count() + value_net.param_count(), config.step_size) {
    config_.validate();
    if (value_net_->output_dim() != 1)
      throw std::invalid_argument("trainer: value net must be scalar");
    const int p = policy_->order();
    const int b = config_.batch_size;
    batch_.order = p;
    batch_.size = b;
    batch_.obs.resize(SquareEnv::kObsDim, b * (p + 1));
    batch_.hist_actions = MatrixXd::Zero(SquareEnv::kActionDim, std::max(b * p, 1));
    batch_.coeffs = MatrixXd::Zero(std::max(p, 1), b);
    batch_.actions.resize(SquareEnv::kActionDim, b);
    batch_.log_probs.resize(b);
    batch_.values.resize(b);
    batch_.next_values.resize(b);
    batch_.rewards.resize(b);
    batch_.done.assign(b, 0);
    batch_.timeout.assign(b, 0);
  }

  const TrainConfig& config() const { return config_; }
  double sim_seconds() const { return sim_seconds_; }
  const RolloutBatch& last_batch() const { return batch_; }

  // Runs the policy for batch_size steps across episodes, recording
  // collection-time log-probs with cached-residual semantics.
  RolloutBatch& collect() {
    const int p = policy_->order();
    const int b = config_.batch_size;
    const auto* coeffs = detail::history_coeffs(*policy_);
    batch_.completed_returns.clear();
    batch_.completed_lengths.clear();

    if (episode_active_ && params_dirty_) on_params_updated(env_->mutable_state());
    params_dirty_ = false;

    for (int i = 0; i < b; ++i) {
      if (!episode_active_) {
        env_->reset(rng_);
        episode_active_ = true;
        ep_return_ = 0.0;
        ep_steps_ = 0;
      }
      const ExtendedState& st = env_->state();

      const int base = i * (p + 1);
      batch_.obs.col(base) = st.current();
      const int n = st.effective_entries();
      for (int k = 0; k < p; ++k) {
        batch_.obs.col(base + 1 + k) = st.entry(k).obs;
        batch_.hist_actions.col(i * p + k) = st.entry(k).action;
        batch_.coeffs(k, i) = k < n ? (*coeffs)[k] : 0.0;
      }

      batch_.values(i) = value_of(st.current());
      auto sampled = policy_->sample(st, rng_);
      batch_.actions.col(i) = sampled.action;
      batch_.log_probs(i) = sampled.log_prob;

      StepResult r = env_->step(sampled.action, sampled.residual);
      batch_.rewards(i) = r.reward;
      batch_.done[i] = r.done ? 1 : 0;
      batch_.timeout[i] = r.timeout ? 1 : 0;
      ep_return_ += r.reward;
      ++ep_steps_;

      if (r.done) {
        batch_.next_values(i) = r.timeout ? value_of(r.obs) : 0.0;
        batch_.completed_returns.push_back(ep_return_);
        batch_.completed_lengths.push_back(ep_steps_ * env_->env().dt());
        episode_active_ = false;
      }
    }
    for (int i = 0; i < b - 1; ++i)
      if (!batch_.done[i]) batch_.next_values(i) = batch_.values(i + 1);
    if (!batch_.done[b - 1])
      batch_.next_values(b - 1) = value_of(env_->state().current());

    sim_seconds_ += b * env_->env().dt();
    return batch_;
  }

  // One clipped-surrogate update over the collected batch.
  TrainDiagnostics update(const RolloutBatch& batch) {
    const int b = batch.size;
    const int p = batch.order;
    const int mb_size = std::min(config_.opt_batch, b);
    const int head_params = head_->param_count();
    const int value_params = value_net_->param_count();

    GaeResult gae = gae_advantages(batch.rewards, batch.values,
                                   batch.next_values, batch.done,
                                   config_.gamma, config_.lambda);
    VectorXd adv = gae.advantages;
    normalize_advantages(adv);

    TrainDiagnostics diag;
    diag.explained_var = explained_variance(batch.values, gae.value_targets);
    diag.episodes = static_cast<int>(batch.completed_returns.size());
    if (diag.episodes > 0) {
      diag.mean_return =
          std::accumulate(batch.completed_returns.begin(),
                          batch.completed_returns.end(), 0.0) /
          diag.episodes;
      diag.mean_ep_len =
          std::accumulate(batch.completed_lengths.begin(),
                          batch.completed_lengths.end(), 0.0) /
          diag.episodes;
    }

    std::vector<int> order(b);
    std::iota(order.begin(), order.end(), 0);

    PolicyBatch mb;
    mb.order = p;
    mb.obs.resize(batch.obs.rows(), mb_size * (p + 1));
    mb.hist_actions.resize(batch.hist_actions.rows(), std::max(mb_size * p, 1));
    mb.coeffs.resize(batch.coeffs.rows(), mb_size);
    mb.actions.resize(batch.actions.rows(), mb_size);
    MatrixXd value_obs(batch.obs.rows(), mb_size);
    VectorXd mb_logp_old(mb_size), mb_adv(mb_size), mb_targets(mb_size);
    PolicyEval eval;
    Mlp::Cache value_cache;
    VectorXd grad(head_params + value_params);
    VectorXd weights(mb_size);
    VectorXd ent_weights(mb_size);
    VectorXd all_params(head_params + value_params);

    double kl_acc = 0.0, clip_acc = 0.0, pg_acc = 0.0, v_acc = 0.0;
    int minibatches = 0;
    bool first_minibatch = true;

    for (int epoch = 0; epoch < config_.opt_epochs; ++epoch) {
      // Fisher-Yates driven by the trainer RNG for reproducibility
      for (int i = b - 1; i > 0; --i) {
        const int j = static_cast<int>(rng_.uniform() * (i + 1));
        std::swap(order[i], order[j]);
      }
      for (int start = 0; start + mb_size <= b; start += mb_size) {
        for (int m = 0; m < mb_size; ++m) {
          const int src = order[start + m];
          mb.obs.middleCols(m * (p + 1), p + 1) =
              batch.obs.middleCols(src * (p + 1), p + 1);
          if (p > 0)
            mb.hist_actions.middleCols(m * p, p) =
                batch.hist_actions.middleCols(src * p, p);
          mb.coeffs.col(m) = batch.coeffs.col(src);
          mb.actions.col(m) = batch.actions.col(src);
          value_obs.col(m) = batch.obs.col(src * (p + 1));
          mb_logp_old(m) = batch.log_probs(src);
          mb_adv(m) = adv(src);
          mb_targets(m) = gae.value_targets(src);
        }

        policy_->eval_log_probs(mb, eval);
        double pg_loss = 0.0, kl = 0.0, clipped = 0.0, drift = 0.0;
        for (int m = 0; m < mb_size; ++m) {
          const double logr = eval.log_probs(m) - mb_logp_old(m);
          const double ratio = std::exp(logr);
          const double unclipped = ratio * mb_adv(m);
          const double clipped_ratio =
              std::clamp(ratio, 1.0 - config_.clip_eps, 1.0 + config_.clip_eps);
          const double clipped_obj = clipped_ratio * mb_adv(m);
          pg_loss -= std::min(unclipped, clipped_obj) / mb_size;
          // gradient flows through the unclipped branch when it attains the min
          weights(m) = unclipped <= clipped_obj
                           ? -mb_adv(m) * ratio / mb_size
                           : 0.0;
          ent_weights(m) = config_.ent_coef / mb_size;
          kl += -logr / mb_size;
          clipped += std::abs(ratio - 1.0) > config_.clip_eps ? 1.0 : 0.0;
          drift += std::abs(logr) / mb_size;
        }
        if (first_minibatch) {
          diag.logp_drift = drift;
          first_minibatch = false;
        }
        if (config_.ent_coef > 0.0)
          pg_loss -= config_.ent_coef * eval.entropy.mean();

        const MatrixXd& v_out = value_net_->forward(value_obs, value_cache);
        double v_loss = 0.0;
        MatrixXd g_v(1, mb_size);
        for (int m = 0; m < mb_size; ++m) {
          const double err = v_out(0, m) - mb_targets(m);
          v_loss += err * err / mb_size;
          g_v(0, m) = config_.value_coef * 2.0 * err / mb_size;
        }

        if (!std::isfinite(pg_loss) || !std::isfinite(v_loss)) {
          std::ostringstream oss;
          oss << "ppo update aborted: non-finite loss (policy=" << pg_loss
              << ", value=" << v_loss << ", epoch=" << epoch << ")";
          throw std::runtime_error(oss.str());
        }

        grad.setZero();
        VectorXd head_grad = grad.head(head_params);
        policy_->backward_log_probs(mb, eval, weights, head_grad,
                                    config_.ent_coef > 0.0 ? &ent_weights
                                                           : nullptr);
        grad.head(head_params) = head_grad;
        VectorXd value_grad = grad.tail(value_params);
        value_net_->backward(value_cache, g_v, value_grad);
        grad.tail(value_params) = value_grad;

        if (config_.grad_clip > 0.0) {
          const double norm = grad.norm();
          if (norm > config_.grad_clip) grad *= config_.grad_clip / norm;
        }

        all_params.head(head_params) = head_->get_params();
        all_params.tail(value_params) = value_net_->params();
        adam_.step(all_params, grad);
        head_->set_params(all_params.head(head_params));
        value_net_->set_params(all_params.tail(value_params));
        params_dirty_ = true;

        kl_acc += kl;
        clip_acc += clipped / mb_size;
        pg_acc += pg_loss;
        v_acc += v_loss;
        ++minibatches;
      }
    }

    if (minibatches > 0) {
      diag.kl = kl_acc / minibatches;
      diag.clip_fraction = clip_acc / minibatches;
      diag.policy_loss = pg_acc / minibatches;
      diag.value_loss = v_acc / minibatches;
    }
    diag.sim_seconds = sim_seconds_;
    return diag;
  }

  TrainDiagnostics iterate() { return update(collect()); }

 private:
  double value_of(const VectorXd& obs) {
    return value_net_->forward(MatrixXd(obs), value_step_cache_)(0, 0);
  }

  PolicyHead* head_;
  const Policy* policy_;
  Mlp* value_net_;
  HistoryWrapper* env_;
  TrainConfig config_;
  Rng rng_;
  AdamOptimizer adam_;
  RolloutBatch batch_;
  Mlp::Cache value_step_cache_;
  double sim_seconds_ = 0.0;
  bool episode_active_ = false;
  bool params_dirty_ = false;
  double ep_return_ = 0.0;
  std::int64_t ep_steps_ = 0;
};

}  // namespace arpex
