#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace arpex {

using Eigen::VectorXd;

struct GaeResult {
  VectorXd advantages;     // raw GAE(gamma, lambda) estimates
  VectorXd value_targets;  // advantages + values
};

// Standard GAE recursion over a batch of contiguous episode segments:
//
//   delta_t = r_t + gamma * next_value_t - V(s_t)
//   A_t     = delta_t + gamma * lambda * A_{t+1}   (cut at episode ends)
//
// next_values encodes the bootstrapping policy: V(s_{t+1}) for ordinary and
// truncated steps (including timeouts, which are non-terminal for
// bootstrapping), and 0 where the episode genuinely ended at the goal.
// done marks every episode boundary and cuts the lambda chain.
inline GaeResult gae_advantages(const VectorXd& rewards, const VectorXd& values,
                                const VectorXd& next_values,
                                const std::vector<std::uint8_t>& done,
                                double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n ||
      static_cast<Eigen::Index>(done.size()) != n)
    throw std::invalid_argument("gae: input length mismatch");
  GaeResult out;
  out.advantages.resize(n);
  double carry = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double delta = rewards(t) + gamma * next_values(t) - values(t);
    carry = delta + gamma * lambda * (done[t] ? 0.0 : carry);
    out.advantages(t) = carry;
  }
  out.value_targets = out.advantages + values;
  return out;
}

// In-place normalization to zero mean and unit variance (batch convention).
inline void normalize_advantages(VectorXd& adv) {
  const double mean = adv.mean();
  adv.array() -= mean;
  const double var = adv.squaredNorm() / adv.size();
  adv /= std::sqrt(var) + 1e-8;
}

// 1 - Var(targets - values) / Var(targets); 1 is a perfect value fit.
inline double explained_variance(const VectorXd& values,
                                 const VectorXd& targets) {
  const double t_mean = targets.mean();
  const double t_var = (targets.array() - t_mean).square().mean();
  if (t_var <= 0.0) return 0.0;
  const VectorXd resid = targets - values;
  const double r_mean = resid.mean();
  const double r_var = (resid.array() - r_mean).square().mean();
  return 1.0 - r_var / t_var;
}

}  // namespace arpex
