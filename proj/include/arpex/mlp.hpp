#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "arpex/random.hpp"

namespace arpex {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fully connected network with tanh hidden layers and an identity output
// layer. Parameters live in one flat vector with a fixed layout: for each
// layer, the (out x in) weight matrix in column-major order followed by the
// bias. Forward passes record activations so the exact reverse-mode gradient
// can be taken afterwards; the batched API treats matrix columns as samples.
class Mlp {
 public:
  // acts[0] is the input batch, acts[l] the post-activation output of layer l.
  struct Cache {
    std::vector<MatrixXd> acts;
  };

  explicit Mlp(std::vector<int> layer_sizes)
      : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2)
      throw std::invalid_argument("mlp: need at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw std::invalid_argument("mlp: layer sizes must be positive");
    int count = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
      count += (sizes_[l] + 1) * sizes_[l + 1];
    params_ = VectorXd::Zero(count);
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
  int param_count() const { return static_cast<int>(params_.size()); }

  const VectorXd& params() const { return params_; }
  void set_params(const VectorXd& p) {
    if (p.size() != params_.size())
      throw std::invalid_argument("mlp: parameter size mismatch");
    params_ = p;
  }
  VectorXd& mutable_params() { return params_; }

  Eigen::Map<const MatrixXd> weight(int layer) const {
    return {params_.data() + weight_offset(layer), sizes_[layer + 1],
            sizes_[layer]};
  }
  Eigen::Map<const VectorXd> bias(int layer) const {
    return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
  }
  Eigen::Map<MatrixXd> mutable_weight(int layer) {
    return {params_.data() + weight_offset(layer), sizes_[layer + 1],
            sizes_[layer]};
  }
  Eigen::Map<VectorXd> mutable_bias(int layer) {
    return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
  }

  // Batched forward; columns are samples. Reusing the same Cache across calls
  // of the same shape avoids reallocation.
  const MatrixXd& forward(const MatrixXd& input, Cache& cache) const {
    if (input.rows() != input_dim())
      throw std::invalid_argument("mlp: input dimension mismatch");
    const int layers = layer_count();
    cache.acts.resize(layers + 1);
    cache.acts[0] = input;
    for (int l = 0; l < layers; ++l) {
      MatrixXd& out = cache.acts[l + 1];
      out.noalias() = weight(l) * cache.acts[l];
      out.colwise() += bias(l);
      if (l + 1 < layers) out = out.array().tanh();
    }
    return cache.acts.back();
  }

  // Single-sample forward; records activations for backward().
  VectorXd forward(const VectorXd& input) {
    return forward(MatrixXd(input), cache_);
  }

  // Accumulates d(sum_i output_i . output_grad_i)/d(params) into param_grad
  // (which must be zero-initialized by the caller or carry a running sum) and
  // optionally produces the gradient with respect to the inputs.
  void backward(const Cache& cache, const MatrixXd& output_grad,
                VectorXd& param_grad, MatrixXd* input_grad = nullptr) const {
    if (cache.acts.empty())
      throw std::logic_error("mlp: backward called before forward");
    if (param_grad.size() != params_.size())
      throw std::invalid_argument("mlp: gradient buffer size mismatch");
    const int layers = layer_count();
    MatrixXd g = output_grad;
    for (int l = layers - 1; l >= 0; --l) {
      Eigen::Map<MatrixXd> gw(param_grad.data() + weight_offset(l),
                              sizes_[l + 1], sizes_[l]);
      Eigen::Map<VectorXd> gb(param_grad.data() + bias_offset(l),
                              sizes_[l + 1]);
      gw.noalias() += g * cache.acts[l].transpose();
      gb.noalias() += g.rowwise().sum();
      if (l > 0) {
        MatrixXd gx = weight(l).transpose() * g;
        // tanh'(z) = 1 - tanh(z)^2, and acts[l] stores tanh(z)
        g = gx.array() * (1.0 - cache.acts[l].array().square());
      } else if (input_grad != nullptr) {
        input_grad->noalias() = weight(0).transpose() * g;
      }
    }
  }

  // Single-sample gradient of output . output_grad using the activations of
  // the last single-sample forward(). Returns {param gradient, input gradient}.
  std::pair<VectorXd, VectorXd> backward(const VectorXd& output_grad) const {
    VectorXd pg = VectorXd::Zero(params_.size());
    MatrixXd ig(input_dim(), 1);
    backward(cache_, MatrixXd(output_grad), pg, &ig);
    return {std::move(pg), VectorXd(ig.col(0))};
  }

  // Scaled-uniform init, U(-s, s) with s = sqrt(6 / (n_in + n_out)) per layer.
  void init_uniform(Rng& rng) {
    for (int l = 0; l < layer_count(); ++l) {
      const double s = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
      auto w = mutable_weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i)
          w(i, j) = rng.uniform(-s, s);
      mutable_bias(l).setZero();
    }
  }

  // Shrinks the output layer so the initial network output is near zero.
  void scale_final_layer(double factor) {
    const int l = layer_count() - 1;
    mutable_weight(l) *= factor;
    mutable_bias(l) *= factor;
  }

 private:
  int weight_offset(int layer) const {
    int off = 0;
    for (int l = 0; l < layer; ++l) off += (sizes_[l] + 1) * sizes_[l + 1];
    return off;
  }
  int bias_offset(int layer) const {
    return weight_offset(layer) + sizes_[layer] * sizes_[layer + 1];
  }

  std::vector<int> sizes_;
  VectorXd params_;
  Cache cache_;
};

struct LossFn {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
};

// Compares the reverse-mode parameter gradient of loss(net(input)) against
// central finite differences. Returns the maximum relative error, with the
// denominator floored at max(|g|, 1e-8).
inline double check_gradient(Mlp& net, const VectorXd& input,
                             const LossFn& loss, double h = 1e-5) {
  const VectorXd y = net.forward(input);
  const VectorXd analytic = net.backward(loss.grad(y)).first;
  VectorXd params = net.params();
  double max_rel = 0.0;
  for (int i = 0; i < net.param_count(); ++i) {
    const double saved = params(i);
    params(i) = saved + h;
    net.set_params(params);
    const double up = loss.value(net.forward(input));
    params(i) = saved - h;
    net.set_params(params);
    const double down = loss.value(net.forward(input));
    params(i) = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic(i)), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic(i) - fd) / denom);
  }
  net.set_params(params);
  net.forward(input);  // restore the recorded activations
  return max_rel;
}

// Adam with bias correction. One instance owns the moment buffers for a
// parameter vector of fixed size.
class AdamOptimizer {
 public:
  AdamOptimizer(int dim, double step_size, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(step_size),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        m_(VectorXd::Zero(dim)),
        v_(VectorXd::Zero(dim)) {}

  void step(VectorXd& params, const VectorXd& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("adam: size mismatch");
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
    const double corr1 = 1.0 - std::pow(beta1_, t_);
    const double corr2 = 1.0 - std::pow(beta2_, t_);
    params.array() -=
        lr_ * (m_.array() / corr1) / ((v_.array() / corr2).sqrt() + eps_);
  }

  std::int64_t step_count() const { return t_; }
  double step_size() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  VectorXd m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace arpex
