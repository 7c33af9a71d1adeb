#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "arpex/ar_process.hpp"
#include "arpex/mlp.hpp"
#include "arpex/random.hpp"

namespace arpex {

inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kSigmaFloor = 1e-6;  // residual denominator guard
inline constexpr double kLogTwoPi = 1.8378770664093453;

// Diagonal Gaussian head: a mean network plus either a state-independent
// log-std vector (the default) or a state-dependent log-std network. The
// log-std is clamped to [-8, 2] wherever a sigma is produced. sigma_scale is
// a fixed, non-trainable multiplier used by the exploration benchmarks.
class PolicyHead {
 public:
  PolicyHead(Mlp mean_net, int action_dim)
      : mean_net_(std::move(mean_net)),
        log_std_(VectorXd::Zero(action_dim)) {
    if (mean_net_.output_dim() != action_dim)
      throw std::invalid_argument("policy head: mean net output dimension");
  }

  PolicyHead(Mlp mean_net, Mlp std_net)
      : mean_net_(std::move(mean_net)),
        std_net_(std::move(std_net)),
        log_std_(VectorXd::Zero(mean_net_.output_dim())),
        state_dependent_(true) {
    if (std_net_->output_dim() != mean_net_.output_dim() ||
        std_net_->input_dim() != mean_net_.input_dim())
      throw std::invalid_argument("policy head: std net shape");
  }

  // Exactly-zero mean net with unit sigma, the random-agent setting.
  static PolicyHead zero(int obs_dim, int act_dim,
                         const std::vector<int>& hidden) {
    return PolicyHead(Mlp(layer_spec(obs_dim, act_dim, hidden)), act_dim);
  }

  // Training initialization: scaled-uniform hidden layers with the final mean
  // layer shrunk so the initial policy mean is near zero; log_std starts at 0.
  static PolicyHead initialized(int obs_dim, int act_dim,
                                const std::vector<int>& hidden, Rng& rng,
                                bool state_dependent_std = false) {
    Mlp mean(layer_spec(obs_dim, act_dim, hidden));
    mean.init_uniform(rng);
    mean.scale_final_layer(0.01);
    if (!state_dependent_std) return PolicyHead(std::move(mean), act_dim);
    Mlp std_net(layer_spec(obs_dim, act_dim, hidden));
    std_net.init_uniform(rng);
    std_net.scale_final_layer(0.01);  // initial log-std near 0 => sigma near 1
    return PolicyHead(std::move(mean), std::move(std_net));
  }

  int obs_dim() const { return mean_net_.input_dim(); }
  int action_dim() const { return mean_net_.output_dim(); }
  bool state_dependent_std() const { return state_dependent_; }

  const Mlp& mean_net() const { return mean_net_; }
  Mlp& mean_net() { return mean_net_; }
  const Mlp& std_net() const { return *std_net_; }
  Mlp& std_net() { return *std_net_; }

  const VectorXd& log_std() const { return log_std_; }
  void set_log_std(const VectorXd& v) {
    if (v.size() != log_std_.size())
      throw std::invalid_argument("policy head: log_std size");
    log_std_ = v;
  }

  double sigma_scale() const { return sigma_scale_; }
  void set_sigma_scale(double s) {
    if (!(s > 0.0)) throw std::invalid_argument("policy head: sigma scale");
    sigma_scale_ = s;
  }

  VectorXd mean(const VectorXd& obs) const {
    Mlp::Cache cache;
    return mean_net_.forward(MatrixXd(obs), cache).col(0);
  }

  VectorXd sigma(const VectorXd& obs) const {
    if (!state_dependent_)
      return sigma_scale_ *
             log_std_.array().min(kLogStdMax).max(kLogStdMin).exp();
    Mlp::Cache cache;
    VectorXd y = std_net_->forward(MatrixXd(obs), cache).col(0);
    return sigma_scale_ * y.array().min(kLogStdMax).max(kLogStdMin).exp();
  }

  // Trainable parameters: mean net, then log_std (or the std net).
  int param_count() const {
    return mean_net_.param_count() +
           (state_dependent_ ? std_net_->param_count()
                             : static_cast<int>(log_std_.size()));
  }

  VectorXd get_params() const {
    VectorXd out(param_count());
    out.head(mean_net_.param_count()) = mean_net_.params();
    if (state_dependent_)
      out.tail(std_net_->param_count()) = std_net_->params();
    else
      out.tail(log_std_.size()) = log_std_;
    return out;
  }

  void set_params(const VectorXd& p) {
    if (p.size() != param_count())
      throw std::invalid_argument("policy head: parameter size");
    mean_net_.set_params(p.head(mean_net_.param_count()));
    if (state_dependent_)
      std_net_->set_params(p.tail(std_net_->param_count()));
    else
      log_std_ = p.tail(log_std_.size());
  }

 private:
  static std::vector<int> layer_spec(int obs_dim, int act_dim,
                                     const std::vector<int>& hidden) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(act_dim);
    return sizes;
  }

  Mlp mean_net_;
  std::optional<Mlp> std_net_;
  VectorXd log_std_;
  bool state_dependent_ = false;
  double sigma_scale_ = 1.0;
};

// One history slot of the extended state: the observation and action of a
// past step plus the residual (a - mu(s)) / sigma(s) cached under the
// parameters that generated the action.
struct HistEntry {
  VectorXd obs;
  VectorXd action;
  VectorXd residual;
};

// State of the extended MDP: the current observation plus the last p
// (observation, action, residual) triples, most recent first. The buffer is
// padded at reset with p copies of (s_0, zero action); only the first
// min(p, t) entries ever enter a history sum, so the padding is immaterial.
// Single-owner mutable; one instance per environment.
class ExtendedState {
 public:
  ExtendedState(VectorXd obs0, int order, int action_dim) : order_(order) {
    if (order < 0) throw std::invalid_argument("extended state: order");
    HistEntry pad{obs0, VectorXd::Zero(action_dim),
                  VectorXd::Zero(action_dim)};
    hist_.assign(order_, pad);
    current_ = std::move(obs0);
  }

  const VectorXd& current() const { return current_; }
  void set_current(VectorXd obs) { current_ = std::move(obs); }

  int order() const { return order_; }
  std::int64_t t() const { return t_; }
  // Number of history entries that actually participate: min(p, t).
  int effective_entries() const {
    return static_cast<int>(std::min<std::int64_t>(order_, t_));
  }

  // k = 0 is the most recent entry (step t-1).
  const HistEntry& entry(int k) const { return hist_[k]; }

  // Records (s_t, a_t, u_t) and evicts the oldest slot.
  void push(const VectorXd& obs, const VectorXd& action,
            const VectorXd& residual) {
    if (order_ > 0) {
      hist_.pop_back();
      hist_.push_front(HistEntry{obs, action, residual});
    }
    ++t_;
  }

 private:
  int order_;
  std::deque<HistEntry> hist_;
  VectorXd current_;
  std::int64_t t_ = 0;
};

// Called when the policy parameters change mid-episode. Cached residuals are
// deliberately left as computed under the old parameters: they keep feeding
// the history term for at most the next p steps and then roll off, which
// avoids transient spikes after an update. Nothing needs to change in the
// state, so this marks the call site and asserts the intent.
inline void on_params_updated(ExtendedState&) {}

struct ActionDistribution {
  VectorXd mean;
  VectorXd std;
};

inline double diag_normal_log_prob(const VectorXd& x, const VectorXd& mean,
                                   const VectorXd& std) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double z = (x(d) - mean(d)) / std(d);
    acc += -0.5 * kLogTwoPi - std::log(std(d)) - 0.5 * z * z;
  }
  return acc;
}

// Flattened minibatch view consumed by the batched log-prob evaluation.
// Sample i owns observation columns [i*(p+1), i*(p+1)+p] (current state
// first, then lag 1..p), history action columns [i*p, i*p+p-1], and the
// coefficient column coeffs.col(i) which carries phi_k masked to zero beyond
// min(p, t) for that sample.
struct PolicyBatch {
  int order = 0;
  MatrixXd obs;           // obs_dim x B*(p+1)
  MatrixXd hist_actions;  // act_dim x B*p
  MatrixXd coeffs;        // p x B
  MatrixXd actions;       // act_dim x B

  int size() const { return static_cast<int>(actions.cols()); }
};

// Forward cache of one batched log-prob evaluation, kept for the backward
// pass.
struct PolicyEval {
  Mlp::Cache mean_cache;
  Mlp::Cache std_cache;
  MatrixXd sigma;      // act_dim x B*(p+1), per-state sigma
  MatrixXd sigma_arg;  // pre-clamp log-std (state-dependent heads only)
  MatrixXd residuals;  // act_dim x B*p, recomputed under current parameters
  MatrixXd f;          // act_dim x B
  MatrixXd z;          // act_dim x B
  VectorXd log_probs;  // B
  VectorXd entropy;    // B
};

namespace detail {

// sigma for every state column of a batch under the current head; for
// state-independent heads this is one broadcast column.
inline void batch_sigma(const PolicyHead& head, const MatrixXd& obs,
                        PolicyEval& eval) {
  const int cols = static_cast<int>(obs.cols());
  if (head.state_dependent_std()) {
    eval.sigma_arg = head.std_net().forward(obs, eval.std_cache);
    eval.sigma = head.sigma_scale() *
                 eval.sigma_arg.array().min(kLogStdMax).max(kLogStdMin).exp();
  } else {
    const VectorXd sigma =
        head.sigma_scale() *
        VectorXd(head.log_std().array().min(kLogStdMax).max(kLogStdMin).exp());
    eval.sigma = sigma.replicate(1, cols);
  }
}

}  // namespace detail

// The autoregressive policy: a diagonal Gaussian over the extended MDP whose
// mean carries the history term
//
//   f = sum_{k=1..min(p,t)} phi_k (a_{t-k} - mu(s_{t-k})) / sigma(s_{t-k})
//
// so that with zero networks the action stream reproduces the underlying
// AR process exactly. Action sampling uses the residuals cached at
// generation time; log_prob used in training recomputes every residual under
// the current parameters so the gradient flows through each occurrence of
// mu and sigma.
class ArPolicy {
 public:
  enum class ResidualMode {
    cached,     // generation reads cached residuals (default)
    recompute,  // ablation: recompute residuals under current theta everywhere
  };

  ArPolicy(const PolicyHead& head, ArModel model,
           ResidualMode mode = ResidualMode::cached)
      : head_(&head), model_(std::move(model)), mode_(mode) {}

  const ArModel& model() const { return model_; }
  const PolicyHead& head() const { return *head_; }
  int order() const { return model_.order(); }
  ResidualMode residual_mode() const { return mode_; }

  // History term f(s~_t); per action dimension. use_cache selects between the
  // residuals stored in the state and recomputation under current parameters.
  VectorXd history_term(const ExtendedState& state, bool use_cache) const {
    const int act_dim = head_->action_dim();
    VectorXd f = VectorXd::Zero(act_dim);
    const int n = std::min(state.effective_entries(), model_.order());
    const auto& phi = model_.coeffs();
    for (int k = 0; k < n; ++k) {
      const HistEntry& e = state.entry(k);
      if (use_cache) {
        for (int d = 0; d < act_dim; ++d) f(d) += phi[k] * e.residual(d);
      } else {
        const VectorXd mu = head_->mean(e.obs);
        const VectorXd sigma = head_->sigma(e.obs);
        for (int d = 0; d < act_dim; ++d) {
          const double u =
              (e.action(d) - mu(d)) / std::max(sigma(d), kSigmaFloor);
          f(d) += phi[k] * u;
        }
      }
    }
    return f;
  }

  ActionDistribution distribution(const ExtendedState& state,
                                  bool use_cache) const {
    const VectorXd mu = head_->mean(state.current());
    const VectorXd sigma = head_->sigma(state.current());
    const VectorXd f = history_term(state, use_cache);
    ActionDistribution dist;
    dist.mean = mu + sigma.cwiseProduct(f);
    dist.std = model_.noise_std() * sigma;
    return dist;
  }

  struct Sampled {
    VectorXd action;
    double log_prob = 0.0;
    VectorXd residual;  // (a - mu(s_t)) / sigma(s_t) under current parameters
  };

  // Draws a_t = mu + sigma * f + sigma * sigma_Z * eps. Pure; the caller
  // pushes (state.current(), action, residual) into the extended state.
  Sampled sample(const ExtendedState& state, Rng& rng) const {
    const int act_dim = head_->action_dim();
    const VectorXd mu = head_->mean(state.current());
    const VectorXd sigma = head_->sigma(state.current());
    const VectorXd f =
        history_term(state, mode_ == ResidualMode::cached);
    const double noise_std = model_.noise_std();
    Sampled out;
    out.action.resize(act_dim);
    out.residual.resize(act_dim);
    double logp = 0.0;
    for (int d = 0; d < act_dim; ++d) {
      const double eps = rng.normal();
      const double a = mu(d) + sigma(d) * f(d) + sigma(d) * noise_std * eps;
      out.action(d) = a;
      out.residual(d) = (a - mu(d)) / std::max(sigma(d), kSigmaFloor);
      const double std_d = sigma(d) * noise_std;
      const double z = (a - (mu(d) + sigma(d) * f(d))) / std_d;
      logp += -0.5 * kLogTwoPi - std::log(std_d) - 0.5 * z * z;
    }
    out.log_prob = logp;
    return out;
  }

  // Log-density of an action under the current parameters, recomputing the
  // history residuals (use_cache = false semantics).
  double log_prob(const ExtendedState& state, const VectorXd& action) const {
    const ActionDistribution dist = distribution(state, false);
    return diag_normal_log_prob(action, dist.mean, dist.std);
  }

  // Log-density plus its gradient with respect to the head parameters,
  // accumulated through all p+1 occurrences of mu and sigma.
  double log_prob_grad(const ExtendedState& state, const VectorXd& action,
                       VectorXd& grad) const {
    PolicyBatch batch = make_batch(state, action);
    PolicyEval eval;
    eval_log_probs(batch, eval);
    backward_log_probs(batch, eval, VectorXd::Ones(1), grad);
    return eval.log_probs(0);
  }

  PolicyBatch make_batch(const ExtendedState& state,
                         const VectorXd& action) const {
    const int p = model_.order();
    const int act_dim = head_->action_dim();
    PolicyBatch batch;
    batch.order = p;
    batch.obs.resize(head_->obs_dim(), p + 1);
    batch.hist_actions.resize(act_dim, std::max(p, 1));
    batch.hist_actions.setZero();
    batch.coeffs = MatrixXd::Zero(std::max(p, 1), 1);
    batch.actions = action;
    batch.obs.col(0) = state.current();
    const int n = state.effective_entries();
    for (int k = 0; k < p; ++k) {
      const HistEntry& e = state.entry(k);
      batch.obs.col(k + 1) = e.obs;
      batch.hist_actions.col(k) = e.action;
      if (k < n) batch.coeffs(k, 0) = model_.coeffs()[k];
    }
    return batch;
  }

  // Batched log-prob of every (extended state, action) pair in the batch.
  void eval_log_probs(const PolicyBatch& batch, PolicyEval& eval) const {
    const int p = model_.order();
    const int act_dim = head_->action_dim();
    const int b = batch.size();
    const int states_per = p + 1;
    const double noise_std = model_.noise_std();

    const MatrixXd& means = head_->mean_net().forward(batch.obs, eval.mean_cache);
    detail::batch_sigma(*head_, batch.obs, eval);
    const bool sigma_broadcast = !head_->state_dependent_std();

    eval.residuals.resize(act_dim, b * std::max(p, 1));
    eval.f = MatrixXd::Zero(act_dim, b);
    eval.z.resize(act_dim, b);
    eval.log_probs.resize(b);
    eval.entropy.resize(b);

    for (int i = 0; i < b; ++i) {
      const int cur = i * states_per;
      for (int k = 0; k < p; ++k) {
        const int scol = cur + 1 + k;
        const int hcol = i * p + k;
        const double c = batch.coeffs(k, i);
        for (int d = 0; d < act_dim; ++d) {
          const double sig =
              eval.sigma(d, sigma_broadcast ? 0 : scol);
          const double u = (batch.hist_actions(d, hcol) - means(d, scol)) /
                           std::max(sig, kSigmaFloor);
          eval.residuals(d, hcol) = u;
          eval.f(d, i) += c * u;
        }
      }
      double logp = 0.0;
      double ent = 0.0;
      for (int d = 0; d < act_dim; ++d) {
        const double sig = eval.sigma(d, sigma_broadcast ? 0 : cur);
        const double m = means(d, cur) + sig * eval.f(d, i);
        const double std_d = sig * noise_std;
        const double z = (batch.actions(d, i) - m) / std_d;
        eval.z(d, i) = z;
        logp += -0.5 * kLogTwoPi - std::log(std_d) - 0.5 * z * z;
        ent += 0.5 * (kLogTwoPi + 1.0) + std::log(std_d);
      }
      eval.log_probs(i) = logp;
      eval.entropy(i) = ent;
    }
  }

  // Accumulates d(sum_i weights_i * log_probs_i)/d(head params) into grad,
  // which must have head().param_count() entries (zeroed or running). Pass
  // entropy_weights to add a d(entropy)/d(params) contribution.
  void backward_log_probs(const PolicyBatch& batch, const PolicyEval& eval,
                          const VectorXd& weights, VectorXd& grad,
                          const VectorXd* entropy_weights = nullptr) const {
    const int p = model_.order();
    const int act_dim = head_->action_dim();
    const int b = batch.size();
    const int states_per = p + 1;
    const double noise_std = model_.noise_std();
    const bool sigma_broadcast = !head_->state_dependent_std();
    const MatrixXd& means = eval.mean_cache.acts.back();

    if (grad.size() != head_->param_count())
      throw std::invalid_argument("policy backward: gradient buffer size");

    MatrixXd g_means = MatrixXd::Zero(act_dim, b * states_per);
    MatrixXd g_sigma = MatrixXd::Zero(
        act_dim, head_->state_dependent_std() ? b * states_per : 1);

    for (int i = 0; i < b; ++i) {
      const int cur = i * states_per;
      const double w = weights(i);
      const double we = entropy_weights ? (*entropy_weights)(i) : 0.0;
      for (int d = 0; d < act_dim; ++d) {
        const double sig = eval.sigma(d, sigma_broadcast ? 0 : cur);
        const double std_d = sig * noise_std;
        const double z = eval.z(d, i);
        const double g_m = w * z / std_d;           // dlogp/dmean
        const double g_std = w * (z * z - 1.0) / std_d + we / std_d;
        g_means(d, cur) += g_m;
        // sigma(s_t) multiplies both the history shift and the noise scale
        double g_sig_cur = g_m * eval.f(d, i) + g_std * noise_std;
        const double g_f = g_m * sig;
        for (int k = 0; k < p; ++k) {
          const double c = batch.coeffs(k, i);
          if (c == 0.0) continue;
          const int scol = cur + 1 + k;
          const int hcol = i * p + k;
          const double sig_k = eval.sigma(d, sigma_broadcast ? 0 : scol);
          const double sig_k_hat = std::max(sig_k, kSigmaFloor);
          const double g_u = g_f * c;
          g_means(d, scol) -= g_u / sig_k_hat;
          if (sig_k > kSigmaFloor) {
            const double g_sig_k = -g_u * eval.residuals(d, hcol) / sig_k_hat;
            if (sigma_broadcast)
              g_sigma(d, 0) += g_sig_k;
            else
              g_sigma(d, scol) += g_sig_k;
          }
        }
        if (sigma_broadcast)
          g_sigma(d, 0) += g_sig_cur;
        else
          g_sigma(d, cur) += g_sig_cur;
      }
    }

    const int mean_params = head_->mean_net().param_count();
    VectorXd mean_grad = grad.head(mean_params);
    head_->mean_net().backward(eval.mean_cache, g_means, mean_grad);
    grad.head(mean_params) = mean_grad;

    if (head_->state_dependent_std()) {
      // chain through sigma = scale * exp(clamp(y)); zero outside the clamp
      MatrixXd g_y =
          (eval.sigma_arg.array() > kLogStdMin &&
           eval.sigma_arg.array() < kLogStdMax)
              .select(g_sigma.array() * eval.sigma.array(), 0.0);
      VectorXd std_grad = grad.tail(head_->std_net().param_count());
      head_->std_net().backward(eval.std_cache, g_y, std_grad);
      grad.tail(head_->std_net().param_count()) = std_grad;
    } else {
      for (int d = 0; d < act_dim; ++d) {
        const double ls = head_->log_std()(d);
        if (ls > kLogStdMin && ls < kLogStdMax)
          grad(mean_params + d) += g_sigma(d, 0) * eval.sigma(d, 0);
      }
    }
  }

 private:
  const PolicyHead* head_;
  ArModel model_;
  ResidualMode mode_;
};

// The plain diagonal Gaussian policy baseline, a_t = mu(s_t) + sigma(s_t) eps.
// Shares the batch plumbing with ArPolicy through order() == 0, so the
// trainer drives either policy identically.
class GaussianPolicy {
 public:
  explicit GaussianPolicy(const PolicyHead& head) : head_(&head) {}

  const PolicyHead& head() const { return *head_; }
  int order() const { return 0; }

  using Sampled = ArPolicy::Sampled;

  Sampled sample(const ExtendedState& state, Rng& rng) const {
    const int act_dim = head_->action_dim();
    const VectorXd mu = head_->mean(state.current());
    const VectorXd sigma = head_->sigma(state.current());
    Sampled out;
    out.action.resize(act_dim);
    out.residual = VectorXd::Zero(act_dim);
    double logp = 0.0;
    for (int d = 0; d < act_dim; ++d) {
      const double eps = rng.normal();
      const double a = mu(d) + sigma(d) * eps;
      out.action(d) = a;
      out.residual(d) = (a - mu(d)) / std::max(sigma(d), kSigmaFloor);
      const double z = (a - mu(d)) / sigma(d);
      logp += -0.5 * kLogTwoPi - std::log(sigma(d)) - 0.5 * z * z;
    }
    out.log_prob = logp;
    return out;
  }

  double log_prob(const ExtendedState& state, const VectorXd& action) const {
    return diag_normal_log_prob(action, head_->mean(state.current()),
                                head_->sigma(state.current()));
  }

  double log_prob_grad(const ExtendedState& state, const VectorXd& action,
                       VectorXd& grad) const {
    PolicyBatch batch;
    batch.order = 0;
    batch.obs = state.current();
    batch.hist_actions.resize(head_->action_dim(), 1);
    batch.hist_actions.setZero();
    batch.coeffs = MatrixXd::Zero(1, 1);
    batch.actions = action;
    PolicyEval eval;
    eval_log_probs(batch, eval);
    backward_log_probs(batch, eval, VectorXd::Ones(1), grad);
    return eval.log_probs(0);
  }

  void eval_log_probs(const PolicyBatch& batch, PolicyEval& eval) const {
    const int act_dim = head_->action_dim();
    const int b = batch.size();
    const MatrixXd& means = head_->mean_net().forward(batch.obs, eval.mean_cache);
    detail::batch_sigma(*head_, batch.obs, eval);
    const bool sigma_broadcast = !head_->state_dependent_std();
    eval.z.resize(act_dim, b);
    eval.log_probs.resize(b);
    eval.entropy.resize(b);
    for (int i = 0; i < b; ++i) {
      double logp = 0.0, ent = 0.0;
      for (int d = 0; d < act_dim; ++d) {
        const double sig = eval.sigma(d, sigma_broadcast ? 0 : i);
        const double z = (batch.actions(d, i) - means(d, i)) / sig;
        eval.z(d, i) = z;
        logp += -0.5 * kLogTwoPi - std::log(sig) - 0.5 * z * z;
        ent += 0.5 * (kLogTwoPi + 1.0) + std::log(sig);
      }
      eval.log_probs(i) = logp;
      eval.entropy(i) = ent;
    }
  }

  void backward_log_probs(const PolicyBatch& batch, const PolicyEval& eval,
                          const VectorXd& weights, VectorXd& grad,
                          const VectorXd* entropy_weights = nullptr) const {
    const int act_dim = head_->action_dim();
    const int b = batch.size();
    const bool sigma_broadcast = !head_->state_dependent_std();

    if (grad.size() != head_->param_count())
      throw std::invalid_argument("policy backward: gradient buffer size");

    MatrixXd g_means = MatrixXd::Zero(act_dim, b);
    MatrixXd g_sigma =
        MatrixXd::Zero(act_dim, head_->state_dependent_std() ? b : 1);
    for (int i = 0; i < b; ++i) {
      const double w = weights(i);
      const double we = entropy_weights ? (*entropy_weights)(i) : 0.0;
      for (int d = 0; d < act_dim; ++d) {
        const double sig = eval.sigma(d, sigma_broadcast ? 0 : i);
        const double z = eval.z(d, i);
        g_means(d, i) = w * z / sig;
        const double g_sig = w * (z * z - 1.0) / sig + we / sig;
        if (sigma_broadcast)
          g_sigma(d, 0) += g_sig;
        else
          g_sigma(d, i) = g_sig;
      }
    }

    const int mean_params = head_->mean_net().param_count();
    VectorXd mean_grad = grad.head(mean_params);
    head_->mean_net().backward(eval.mean_cache, g_means, mean_grad);
    grad.head(mean_params) = mean_grad;

    if (head_->state_dependent_std()) {
      MatrixXd g_y =
          (eval.sigma_arg.array() > kLogStdMin &&
           eval.sigma_arg.array() < kLogStdMax)
              .select(g_sigma.array() * eval.sigma.array(), 0.0);
      VectorXd std_grad = grad.tail(head_->std_net().param_count());
      head_->std_net().backward(eval.std_cache, g_y, std_grad);
      grad.tail(head_->std_net().param_count()) = std_grad;
    } else {
      for (int d = 0; d < act_dim; ++d) {
        const double ls = head_->log_std()(d);
        if (ls > kLogStdMin && ls < kLogStdMax)
          grad(mean_params + d) += g_sigma(d, 0) * eval.sigma(d, 0);
      }
    }
  }

 private:
  const PolicyHead* head_;
};

}  // namespace arpex
