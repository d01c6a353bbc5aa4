#ifndef TFILTER_SDE_HPP
#define TFILTER_SDE_HPP

#include <functional>
#include <string>
#include <vector>

#include "tfilter/common.hpp"
#include "tfilter/rng.hpp"

namespace tfilter {

/// Time-homogeneous SDE  dx = b(x) dt + sigma(x) dW.
/// When exact_step is set it samples the exact one-step transition over an
/// arbitrary dt and is preferred over numerical integration.
struct SdeModel {
  int dim = 0;
  std::function<VectorXd(const VectorXd&)> drift;      // b(x)
  std::function<MatrixXd(const VectorXd&)> diffusion;  // sigma(x), dim x dim
  std::function<VectorXd(const VectorXd&, double, RngStream&)> exact_step;
  std::string name;
};

/// y = h(x) + eta, eta ~ N(0, R).
struct DiscreteObservationModel {
  std::function<VectorXd(const VectorXd&)> h;
  MatrixXd R;
  int p = 0;

  /// Checks symmetry (1e-12) and positive definiteness of R.
  void validate() const;
  /// Solves R z = v through a Cholesky factor.
  VectorXd apply_R_inv(const VectorXd& v) const;
};

/// Cumulative observation path  dz = h(x) dt + sqrt(R_c) dW,  z(0) = 0.
struct ContinuousObservationPath {
  VectorXd times;            // strictly increasing, times[0] = t0
  std::vector<VectorXd> z;   // z[j] at times[j]; z[0] = 0
  MatrixXd R_c;
  double gamma = 0.0;        // noise scale when R_c = gamma^2 I

  void validate() const;
};

/// One Euler-Maruyama step  x + b(x) dt + sigma(x) sqrt(dt) xi.
VectorXd euler_maruyama_step(const SdeModel& m, const VectorXd& x, double dt,
                             RngStream& rng);

/// One sample of the time-tau stochastic flow from x0. Uses exact_step with a
/// single step when the model provides it, otherwise Euler-Maruyama with the
/// given number of substeps.
VectorXd flow_sample(const SdeModel& m, const VectorXd& x0, double tau,
                     int substeps, RngStream& rng);

/// Closed-form transition density of dx = tanh(x) dt + dW over time dt.
double benes_transition_density(double x_prev, double x, double dt);

struct TruthAndObservations {
  std::vector<VectorXd> states;        // x_0 .. x_J
  std::vector<VectorXd> observations;  // y_1 .. y_J
};

/// Simulates the truth path on a dt grid and produces y_k = h(x_k) + eta_k.
TruthAndObservations generate_truth_and_observations(
    const SdeModel& m, const DiscreteObservationModel& obs, const VectorXd& x0,
    int J, double dt, int substeps, RngStream& rng);

/// Left-Riemann increments  z_{j+1} = z_j + h(x_j) dt + gamma sqrt(dt) xi_j.
ContinuousObservationPath generate_continuous_observation(
    const std::function<VectorXd(const VectorXd&)>& h, int obs_dim,
    double gamma, const std::vector<VectorXd>& truth, double dt, double t0,
    RngStream& rng);

}  // namespace tfilter

#endif
