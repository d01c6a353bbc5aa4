#ifndef TFILTER_MODELS_HPP
#define TFILTER_MODELS_HPP

#include <functional>

#include "tfilter/sde.hpp"

namespace tfilter {

/// Variance of the exact Ornstein-Uhlenbeck one-step noise. The source model
/// uses Sigma_k = exp(-2 lambda dt); the textbook exact discretization is
/// (1 - exp(-2 lambda dt)) / (2 lambda). Both are available; "paper" is the
/// reproduction default.
enum class OuVariance { paper, textbook };

double ou_step_variance(double lambda, double dt,
                        OuVariance v = OuVariance::paper);

/// dx = -lambda x dt + dW with the exact one-step transition
/// x' = exp(-lambda dt) x + N(0, Sigma_k).
SdeModel ou_model(double lambda, OuVariance v = OuVariance::paper);

/// dx = tanh(x) dt + dW, integrated by Euler-Maruyama.
SdeModel benes_model();

struct Lorenz63Params {
  double a = 10.0;
  double b = 8.0 / 3.0;
  double r = 28.0;
  double sigma1 = 2.0;
  double sigma2 = 2.0;
  double sigma3 = 2.0;
};

/// Lorenz'63 with additive noise in the shifted coordinates
///   dv1 = a (v2 - v1)
///   dv2 = -a v1 - v2 - v1 v3
///   dv3 = v1 v2 - b v3 - b (r + a)
/// (third coordinate translated by r + a relative to the classical system).
SdeModel lorenz63_model(const Lorenz63Params& p = {});

/// Analytic drift Jacobian of lorenz63_model, for the extended Kalman filters.
std::function<MatrixXd(const VectorXd&)> lorenz63_drift_jacobian(
    const Lorenz63Params& p = {});

}  // namespace tfilter

#endif
