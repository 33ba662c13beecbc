#pragma once

// Pixel-wise relaxometry: Levenberg-Marquardt core, MOLLI T1 (three-parameter
// with Look-Locker correction) and monoexponential T2 fits.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qmri/tensor.hpp"

namespace qmri {

struct FitConfig {
  int max_iters = 50;
  double damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 0.1;
  double param_tol = 1e-8;
  bool magnitude_fit = true;
  bool polarity_restoration = true;
  double nonfit_threshold = 1e-6;  // mean |S| below this fraction of the image max is not fitted
  int threads = 1;

  void validate() const;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct LmResult {
  Eigen::VectorXd params;
  double residual_norm = 0.0;
  bool converged = false;
  int accepted_steps = 0;
  std::vector<double> cost_history;  // ||r|| at the start and after each accepted step
};

// Minimizes ||r(x)||^2 with (J^T J + mu I) steps; a step is accepted iff the cost
// decreases. Converges when a step is below param_tol * (||x|| + param_tol).
LmResult lm_fit(const ResidualFn& residual, const JacobianFn& jacobian, const Eigen::VectorXd& x0,
                const FitConfig& cfg);

// Signal models and their analytic Jacobians (columns follow the parameter order).
// MOLLI: p = (A, B, T1*), s = A - B exp(-t / T1*).
// T2:    p = (S0, T2),    s = S0 exp(-t / T2).
Eigen::VectorXd molli_model(const Eigen::VectorXd& p, std::span<const double> times);
Eigen::MatrixXd molli_jacobian(const Eigen::VectorXd& p, std::span<const double> times);
Eigen::VectorXd t2_model(const Eigen::VectorXd& p, std::span<const double> times);
Eigen::MatrixXd t2_jacobian(const Eigen::VectorXd& p, std::span<const double> times);

struct PixelFit {
  double value = 0.0;  // T1 or T2, ms; 0 when not fitted
  double residual_norm = 0.0;
  bool converged = false;
  bool fitted = false;
  Eigen::VectorXd params;  // (A, B, T1*) or (S0, T2)
};

// `signal` holds |S| when magnitude fitting, otherwise the phase-corrected real signal.
PixelFit fit_t1_pixel(std::span<const double> signal, std::span<const double> times, const FitConfig& cfg);
PixelFit fit_t2_pixel(std::span<const double> signal, std::span<const double> times, const FitConfig& cfg);

struct ParamMap {
  Tensor value;          // [H, W] ms
  Tensor residual_norm;  // [H, W]
  std::vector<std::uint8_t> converged;
  std::vector<std::uint8_t> fitted;
  Tensor a, b, t1_star;  // MOLLI only

  std::int64_t height() const { return value.dim(0); }
  std::int64_t width() const { return value.dim(1); }
};

// frames: complex [T, H, W, 2].
ParamMap fit_t1_molli(const Tensor& frames, std::span<const double> times, const FitConfig& cfg = {});
ParamMap fit_t2(const Tensor& frames, std::span<const double> times, const FitConfig& cfg = {});

}  // namespace qmri
