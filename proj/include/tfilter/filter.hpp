#ifndef TFILTER_FILTER_HPP
#define TFILTER_FILTER_HPP

#include <functional>
#include <vector>

#include "tfilter/partition.hpp"
#include "tfilter/sde.hpp"
#include "tfilter/ulam.hpp"

namespace tfilter {

struct LikelihoodOptions {
  double floor = 1e-300;     // entrywise lower clamp on g
  bool box_averaged = false; // quadrature-average g over each box
  int quad_nodes = 4;        // nodes per axis for the box average
};

/// Observation likelihood evaluated at the mass points.
struct LikelihoodVector {
  VectorXd g;
  bool floor_applied = false;
  double g_min = 0.0;  // realized kappa bound diagnostics
  double g_max = 0.0;
};

/// g[i] = exp(-1/2 (y - h(x_i))' R^{-1} (y - h(x_i))) clamped below at the
/// configured floor. x_i is the mass point of box i (or a box average when
/// configured).
LikelihoodVector likelihood_vector(const Partition& p,
                                   const DiscreteObservationModel& obs,
                                   const VectorXd& y,
                                   const LikelihoodOptions& opts = {});

/// Prediction on a uniform partition: W_{j+1} = W_j P. Conserves total mass.
WeightVector predict(const WeightVector& w, const TransitionMatrix& tm);

/// General weight transport for per-box measures mu(B_i):
/// w'_k = sum_i (mu_i / mu_k) w_i P_ik. Reduces to predict() when all
/// measures are equal.
WeightVector predict_nonuniform(const WeightVector& w,
                                const TransitionMatrix& tm,
                                const VectorXd& box_measures);

/// Bayes update: w_i ~ g_i * w_i, rescaled to unit mass in the density
/// convention.
WeightVector analyze(const Partition& p, const WeightVector& prior,
                     const LikelihoodVector& g);

struct FilterStep {
  int j = 0;
  double t = 0.0;
  WeightVector prior;      // before analysis
  WeightVector posterior;  // after analysis
  VectorXd mean;
  MatrixXd cov;
  Index support = 0;          // boxes carrying mass above 1e-12
  double clamped_mass = 0.0;  // negative mass removed by low-rank truncation
};

struct FilterTrace {
  std::vector<FilterStep> steps;  // steps[0] is the initial state
  double log_normalizer = 0.0;    // accumulated by the Zakai recursion
};

/// Perron-Frobenius operator filter: alternates predict and analyze over the
/// observation sequence. The trace records priors and posteriors per step.
FilterTrace pfof_run(const TransitionMatrix& tm, const WeightVector& w0,
                     const std::vector<VectorXd>& observations,
                     const DiscreteObservationModel& obs, const Partition& p,
                     double t0 = 0.0, const LikelihoodOptions& lopts = {});

/// One Zakai splitting step: W -> G (.) (W P) with
/// g^c(x) = exp(<h(x), dz>_{R_c} - tau/2 |h(x)|^2_{R_c}). The working vector
/// is renormalized and the log-normalizer increment is returned through
/// log_normalizer.
WeightVector zakai_step(const WeightVector& w, const TransitionMatrix& tm,
                        const MatrixXd& h_at_mass_points, const MatrixXd& R_c,
                        const VectorXd& z_increment, double tau,
                        const Partition& p, double* log_normalizer = nullptr);

/// Runs the Zakai recursion along a continuous observation path.
FilterTrace zakai_run(const TransitionMatrix& tm, const WeightVector& w0,
                      const ContinuousObservationPath& path,
                      const std::function<VectorXd(const VectorXd&)>& h,
                      const Partition& p);

/// Total-variation distance 1/2 sum_i |a_i - b_i| mu(B_i) in [0, 1].
double total_variation(const WeightVector& a, const WeightVector& b,
                       const Partition& p);

/// Total variation between a piecewise-constant density and an arbitrary
/// density over the whole space (mass of rho outside the domain counts), by
/// per-box trapezoid quadrature.
double total_variation_vs_density(
    const WeightVector& w, const Partition& p,
    const std::function<double(const VectorXd&)>& rho, int nodes_per_dim = 32);

}  // namespace tfilter

#endif
