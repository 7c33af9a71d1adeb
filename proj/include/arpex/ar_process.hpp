#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace arpex {

// Maximum supported process order. Elementary-symmetric expansion and the
// dense Yule-Walker solve stay well-conditioned up to here.
inline constexpr int kMaxOrder = 32;

namespace detail {

inline void check_order(std::size_t p) {
  if (p == 0) throw std::invalid_argument("ar: order must be at least 1");
  if (p > static_cast<std::size_t>(kMaxOrder))
    throw std::invalid_argument("ar: order exceeds maximum of 32");
}

inline void check_root(double a) {
  if (!(a >= 0.0 && a < 1.0))
    throw std::invalid_argument("ar: roots must lie in [0, 1)");
}

}  // namespace detail

// Coefficients of the stationary AR-p process whose characteristic polynomial
// is prod_i (z - alpha_i): phi_k = (-1)^(k+1) e_k(alpha_1..alpha_p) with e_k
// the k-th elementary symmetric polynomial. Computed by iterative polynomial
// expansion, which is numerically stable for the supported orders.
inline std::vector<double> coeffs_from_roots(const std::vector<double>& roots) {
  detail::check_order(roots.size());
  for (double a : roots) detail::check_root(a);
  const std::size_t p = roots.size();
  // c holds the monic polynomial coefficients: z^p + c[1] z^(p-1) + ... + c[p].
  std::vector<double> c(p + 1, 0.0);
  c[0] = 1.0;
  std::size_t degree = 0;
  for (double a : roots) {
    ++degree;
    for (std::size_t i = degree; i >= 1; --i) c[i] -= a * c[i - 1];
  }
  std::vector<double> phi(p);
  for (std::size_t k = 1; k <= p; ++k) phi[k - 1] = -c[k];
  return phi;
}

// Binomial subfamily: all p roots equal to alpha, so
// phi_k = (-1)^(k+1) * C(p, k) * alpha^k.
inline std::vector<double> coeffs_binomial(int p, double alpha) {
  detail::check_order(p <= 0 ? 0 : static_cast<std::size_t>(p));
  detail::check_root(alpha);
  std::vector<double> phi(p);
  double binom = 1.0;  // C(p, k), updated incrementally
  double apow = 1.0;   // alpha^k
  double sign = 1.0;
  for (int k = 1; k <= p; ++k) {
    binom *= static_cast<double>(p - k + 1) / static_cast<double>(k);
    apow *= alpha;
    phi[k - 1] = sign * binom * apow;
    sign = -sign;
  }
  return phi;
}

// Roots of the characteristic polynomial z^p - sum_i phi_i z^(p-i), taken as
// the eigenvalues of its companion matrix (QR iteration via Eigen's
// EigenSolver).
inline std::vector<std::complex<double>> characteristic_roots(
    const std::vector<double>& coeffs) {
  detail::check_order(coeffs.size());
  const int p = static_cast<int>(coeffs.size());
  if (p == 1) return {std::complex<double>(coeffs[0], 0.0)};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < p; ++j) companion(0, j) = coeffs[j];
  for (int i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);
  std::vector<std::complex<double>> roots(p);
  for (int i = 0; i < p; ++i) roots[i] = solver.eigenvalues()(i);
  return roots;
}

// True iff every characteristic root has modulus < 1 - 1e-9, i.e. the process
// is stationary with a safety margin against roots on the unit circle.
inline bool is_stationary(const std::vector<double>& coeffs) {
  for (const auto& r : characteristic_roots(coeffs))
    if (std::abs(r) >= 1.0 - 1e-9) return false;
  return true;
}

struct StationarySolution {
  std::vector<double> autocov;  // gamma_1 .. gamma_p
  double noise_var = 0.0;       // sigma_Z^2 giving unit stationary variance
};

// Solves the Yule-Walker system with gamma_0 pinned to 1:
//
//   gamma_j = sum_{k=1..p} phi_k gamma_{|j-k|},  j = 1..p
//   sigma_Z^2 = 1 - sum_i phi_i gamma_i
//
// The equations are rearranged into A x = b over the unknowns
// x = (gamma_1..gamma_p): row j gets +1 on gamma_j, every phi_k contributes
// -phi_k to the coefficient of gamma_{|j-k|} (terms hitting the same lag
// merge), and the k = j term multiplies the known gamma_0 = 1 so it moves to
// the right-hand side. Dense LU with partial pivoting; the condition number
// is estimated as 1/rcond of the factorization.
inline StationarySolution solve_stationary(const std::vector<double>& coeffs) {
  detail::check_order(coeffs.size());
  const int p = static_cast<int>(coeffs.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (int j = 1; j <= p; ++j) {
    A(j - 1, j - 1) += 1.0;
    for (int k = 1; k <= p; ++k) {
      const int lag = std::abs(j - k);
      if (lag == 0)
        b(j - 1) += coeffs[k - 1];
      else
        A(j - 1, lag - 1) -= coeffs[k - 1];
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-12))
    throw std::runtime_error("near-nonstationary model");
  const Eigen::VectorXd gamma = lu.solve(b);
  double acc = 0.0;
  for (int i = 0; i < p; ++i) acc += coeffs[i] * gamma(i);
  const double noise_var = 1.0 - acc;
  if (!(noise_var > 0.0) || !std::isfinite(noise_var))
    throw std::runtime_error("invalid coefficients");
  StationarySolution sol;
  sol.autocov.assign(gamma.data(), gamma.data() + p);
  sol.noise_var = noise_var;
  return sol;
}

// A validated stationary AR-p Gaussian process with standard normal
// stationary distribution: X_t = sum_k phi_k X_{t-k} + Z_t with
// Z_t ~ N(0, noise_var) and var(X_t) = 1. Immutable once constructed.
class ArModel {
 public:
  static ArModel from_roots(std::vector<double> roots) {
    std::vector<double> phi = coeffs_from_roots(roots);
    StationarySolution sol = solve_stationary(phi);
    return ArModel(std::move(roots), std::move(phi), std::move(sol));
  }

  static ArModel binomial(int p, double alpha) {
    detail::check_order(p <= 0 ? 0 : static_cast<std::size_t>(p));
    detail::check_root(alpha);
    std::vector<double> roots(p, alpha);
    std::vector<double> phi = coeffs_binomial(p, alpha);
    StationarySolution sol = solve_stationary(phi);
    return ArModel(std::move(roots), std::move(phi), std::move(sol));
  }

  int order() const { return static_cast<int>(coeffs_.size()); }
  const std::vector<double>& roots() const { return roots_; }
  const std::vector<double>& coeffs() const { return coeffs_; }
  double noise_var() const { return noise_var_; }
  double noise_std() const { return noise_std_; }
  // gamma_0 .. gamma_p with gamma_0 = 1 by construction.
  const std::vector<double>& autocov() const { return autocov_; }

  bool is_white_noise() const {
    return std::all_of(coeffs_.begin(), coeffs_.end(),
                       [](double c) { return c == 0.0; });
  }

 private:
  ArModel(std::vector<double> roots, std::vector<double> phi,
          StationarySolution sol)
      : roots_(std::move(roots)),
        coeffs_(std::move(phi)),
        noise_var_(sol.noise_var),
        noise_std_(std::sqrt(sol.noise_var)) {
    autocov_.reserve(coeffs_.size() + 1);
    autocov_.push_back(1.0);
    autocov_.insert(autocov_.end(), sol.autocov.begin(), sol.autocov.end());
  }

  std::vector<double> roots_;
  std::vector<double> coeffs_;
  double noise_var_;
  double noise_std_;
  std::vector<double> autocov_;
};

struct AcfTable {
  int max_lag = 0;
  std::vector<double> rho;  // rho_0 .. rho_max_lag
};

// Autocorrelation rho_tau = gamma_tau / gamma_0. Lags up to p come from the
// Yule-Walker solution; beyond p the autocovariance extends by the recursion
// gamma_tau = sum_k phi_k gamma_{tau-k}.
inline AcfTable acf(const ArModel& model, int max_lag) {
  if (max_lag < 0) throw std::invalid_argument("acf: max_lag must be >= 0");
  const int p = model.order();
  AcfTable table;
  table.max_lag = max_lag;
  table.rho.resize(max_lag + 1);
  for (int tau = 0; tau <= max_lag; ++tau) {
    if (tau <= p) {
      table.rho[tau] = model.autocov()[tau];
    } else {
      double acc = 0.0;
      for (int k = 1; k <= p; ++k) acc += model.coeffs()[k - 1] * table.rho[tau - k];
      table.rho[tau] = acc;
    }
  }
  return table;
}

// Finds the alpha in [0, 1) whose binomial model of order p has lag-1
// autocorrelation equal to target_rho1, by bisection. rho_1 increases
// monotonically in alpha for this family (checked empirically on a grid in
// the tests).
inline double alpha_for_rho1(int p, double target_rho1) {
  detail::check_order(p <= 0 ? 0 : static_cast<std::size_t>(p));
  if (!(target_rho1 >= 0.0 && target_rho1 < 1.0))
    throw std::invalid_argument("alpha_for_rho1: target must lie in [0, 1)");
  if (target_rho1 == 0.0) return 0.0;
  auto rho1_at = [p](double alpha) {
    try {
      return solve_stationary(coeffs_binomial(p, alpha)).autocov[0];
    } catch (const std::runtime_error&) {
      return 1.0;  // solve breaks down only as alpha -> 1, where rho_1 -> 1
    }
  };
  double lo = 0.0, hi = 0.999999;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rho1_at(mid);
    if (std::abs(r - target_rho1) < 1e-9) return mid;
    if (r < target_rho1)
      lo = mid;
    else
      hi = mid;
  }
  throw std::runtime_error("alpha_for_rho1: bisection did not converge");
}

// Mutable sampling state for a process trajectory: a ring buffer of the most
// recent min(p, t) values. Starting empty matches zero-initialization of the
// process (X_{t-k} = 0 for t-k < 0), which equilibrates without start-up
// spikes. Single-owner; use one instance per thread.
class ProcessState {
 public:
  explicit ProcessState(const ArModel& model)
      : model_(&model), buf_(model.order(), 0.0) {}

  // Advances the process one step with the supplied standard normal draw:
  // X_t = sum_{k=1..min(p,t)} phi_k X_{t-k} + sigma_Z * noise.
  // Deterministic given the noise stream.
  double step(double noise) {
    const auto& phi = model_->coeffs();
    const int p = model_->order();
    const int n = history_size();
    double f = 0.0;
    for (int k = 0; k < n; ++k) f += phi[k] * value_lag(k);
    const double x = f + model_->noise_std() * noise;
    head_ = (head_ + p - 1) % p;
    buf_[head_] = x;
    ++t_;
    return x;
  }

  // X_{t-1-k}; k must be < history_size().
  double value_lag(int k) const {
    return buf_[(head_ + k) % model_->order()];
  }

  int history_size() const {
    return static_cast<int>(std::min<std::int64_t>(model_->order(), t_));
  }

  std::int64_t step_count() const { return t_; }
  const ArModel& model() const { return *model_; }

  void reset() {
    std::fill(buf_.begin(), buf_.end(), 0.0);
    head_ = 0;
    t_ = 0;
  }

 private:
  const ArModel* model_;
  std::vector<double> buf_;
  int head_ = 0;
  std::int64_t t_ = 0;
};

}  // namespace arpex
