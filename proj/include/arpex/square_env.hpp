#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>

#include "arpex/policy.hpp"
#include "arpex/random.hpp"

namespace arpex {

struct StepResult {
  VectorXd obs;
  double reward = 0.0;
  bool done = false;
  bool timeout = false;  // hit the episode cap; non-terminal for bootstrapping
};

// 10x10 arena with direct velocity control. The agent starts at the center,
// the target sits on the circle of radius 2.5 around it, reward is -dt per
// step, and the episode ends within distance 0.5 of the target or after
// 1000 simulated seconds. Positions clamp at the walls, so a saturated
// policy gets stuck at the boundary. Observation: [pos, vel, target - pos].
class SquareEnv {
 public:
  static constexpr double kArenaHalf = 5.0;
  static constexpr double kTargetRadius = 2.5;
  static constexpr double kDoneDist = 0.5;
  static constexpr double kEpisodeCapSeconds = 1000.0;
  static constexpr int kObsDim = 6;
  static constexpr int kActionDim = 2;

  using StepHook = std::function<void(double t, const Eigen::Vector2d& pos,
                                      const Eigen::Vector2d& vel,
                                      const Eigen::Vector2d& action,
                                      double reward, bool done)>;

  // terminating = false runs pure kinematics (exploration trajectories).
  explicit SquareEnv(double action_rate_hz, bool terminating = true)
      : dt_(1.0 / action_rate_hz),
        cap_steps_(std::llround(kEpisodeCapSeconds * action_rate_hz)),
        terminating_(terminating) {
    if (!(action_rate_hz > 0.0))
      throw std::invalid_argument("square env: action rate must be positive");
  }

  double dt() const { return dt_; }
  double elapsed() const { return static_cast<double>(steps_) * dt_; }
  const Eigen::Vector2d& pos() const { return pos_; }
  const Eigen::Vector2d& vel() const { return vel_; }
  const Eigen::Vector2d& target() const { return target_; }
  bool done() const { return done_; }

  VectorXd reset(Rng& rng) {
    pos_.setZero();
    vel_.setZero();
    const double psi = rng.uniform(0.0, 2.0 * M_PI);
    target_ << kTargetRadius * std::cos(psi), kTargetRadius * std::sin(psi);
    steps_ = 0;
    done_ = false;
    return observation();
  }

  VectorXd reset(std::uint64_t seed) {
    Rng rng(seed);
    return reset(rng);
  }

  StepResult step(const VectorXd& action) {
    if (action.size() != kActionDim)
      throw std::invalid_argument("square env: action must be 2-dimensional");
    if (done_) throw std::logic_error("square env: step after episode end");
    const Eigen::Vector2d clipped = action.head<2>().cwiseMax(-1.0).cwiseMin(1.0);
    vel_ = clipped;
    pos_ = (pos_ + vel_ * dt_).cwiseMax(-kArenaHalf).cwiseMin(kArenaHalf);
    ++steps_;
    StepResult result;
    result.reward = -dt_;
    if (terminating_) {
      const bool goal = (pos_ - target_).norm() < kDoneDist;
      result.timeout = !goal && steps_ >= cap_steps_;
      result.done = goal || result.timeout;
    }
    done_ = result.done;
    result.obs = observation();
    if (hook_) hook_(elapsed(), pos_, vel_, clipped, result.reward, result.done);
    return result;
  }

  VectorXd observation() const {
    VectorXd obs(kObsDim);
    obs << pos_(0), pos_(1), vel_(0), vel_(1), target_(0) - pos_(0),
        target_(1) - pos_(1);
    return obs;
  }

  void set_step_hook(StepHook hook) { hook_ = std::move(hook); }

  // Test hook; regular episodes always place the target on the 2.5 circle.
  void set_target_for_test(const Eigen::Vector2d& target) { target_ = target; }

 private:
  double dt_;
  std::int64_t cap_steps_;
  bool terminating_;
  Eigen::Vector2d pos_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d target_ = Eigen::Vector2d::Zero();
  std::int64_t steps_ = 0;
  bool done_ = false;
  StepHook hook_;
};

// Extended-MDP view of an environment: keeps the last p (observation, action)
// pairs next to the current observation. The initial state is padded with p
// repetitions of (s_0, zero action); rewards and termination pass through
// unchanged, so any return obtained through the wrapper equals the return of
// the same action sequence on the raw environment.
class HistoryWrapper {
 public:
  HistoryWrapper(SquareEnv env, int order)
      : env_(std::move(env)),
        order_(order),
        state_(VectorXd::Zero(SquareEnv::kObsDim), order,
               SquareEnv::kActionDim) {}

  SquareEnv& env() { return env_; }
  const SquareEnv& env() const { return env_; }
  int order() const { return order_; }
  const ExtendedState& state() const { return state_; }
  ExtendedState& mutable_state() { return state_; }

  const VectorXd& reset(Rng& rng) {
    state_ = ExtendedState(env_.reset(rng), order_, SquareEnv::kActionDim);
    return state_.current();
  }

  // Advances the underlying environment and shifts the history. The residual
  // is whatever the acting policy cached for this step; pass nothing when
  // driving the wrapper with raw actions.
  StepResult step(const VectorXd& action, const VectorXd& residual) {
    state_.push(state_.current(), action, residual);
    StepResult result = env_.step(action);
    state_.set_current(result.obs);
    return result;
  }

  StepResult step(const VectorXd& action) {
    return step(action, VectorXd::Zero(SquareEnv::kActionDim));
  }

 private:
  SquareEnv env_;
  int order_;
  ExtendedState state_;
};

}  // namespace arpex
