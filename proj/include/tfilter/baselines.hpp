#ifndef TFILTER_BASELINES_HPP
#define TFILTER_BASELINES_HPP

#include <functional>
#include <vector>

#include "tfilter/partition.hpp"
#include "tfilter/sde.hpp"

namespace tfilter {

/// Weighted particle cloud; weights sum to 1.
struct ParticleEnsemble {
  std::vector<VectorXd> positions;
  VectorXd weights;

  void validate() const;
};

/// Samples one assimilation step of the transition kernel from x.
using TransitionSampler = std::function<VectorXd(const VectorXd&, RngStream&)>;
/// Samples from the initial measure.
using InitialSampler = std::function<VectorXd(RngStream&)>;

enum class ResampleKind { multinomial, systematic };

struct SirOptions {
  ResampleKind resample = ResampleKind::multinomial;
  double ess_trigger = -1.0;  // <0: resample every step; else resample when
                              // ESS < ess_trigger * m
  double likelihood_floor = 1e-300;
};

/// m draws with replacement proportional to the weights; output weights 1/m.
ParticleEnsemble multinomial_resample(const ParticleEnsemble& e, int m,
                                      RngStream& rng);
ParticleEnsemble systematic_resample(const ParticleEnsemble& e, int m,
                                     RngStream& rng);

/// Sequential importance resampling filter. Per step: resample to uniform
/// weights, propagate every particle through the transition kernel, reweight
/// by the observation likelihood, normalize. The trace holds the initial
/// ensemble followed by one posterior ensemble per observation.
std::vector<ParticleEnsemble> sir_pf_run(
    const TransitionSampler& kernel, const DiscreteObservationModel& obs,
    const std::vector<VectorXd>& observations, int m,
    const InitialSampler& mu0, RngStream& rng, const SirOptions& opts = {});

/// Bins a particle cloud onto a partition as a piecewise-constant density.
/// Out-of-domain particles are discarded and the rest renormalized; the
/// discarded weight is returned through lost_mass when given.
WeightVector bin_particles(const ParticleEnsemble& e, const Partition& p,
                           double* lost_mass = nullptr);

/// Exact sampling by acceptance-rejection: requires target(x) <= bound *
/// proposal_density(x) everywhere. Envelope violations and acceptance rates
/// below 1e-4 abort with diagnostics.
double acceptance_rejection_sample(
    const std::function<double(double)>& target,
    const std::function<double(RngStream&)>& proposal_sampler,
    const std::function<double(double)>& proposal_density, double bound,
    RngStream& rng);

/// Transition sampler for the Benes SDE over step dt, by acceptance-rejection
/// with a Gaussian N(x_prev, 2 dt) proposal. Writing the target as
///   p(x | x0) = exp(-dt/2) cosh(x)/cosh(x0) N(x; x0, dt)
/// and using cosh(x) <= cosh(x0) e^{|x - x0|} gives the global envelope
///   p / N(.; x0, 2 dt) <= sqrt(2) exp(-dt/2) max_u exp(u - u^2/(4 dt))
///                       = sqrt(2) exp(dt/2),
/// so the acceptance rate is at least 1/(sqrt(2) e^{dt/2}).
TransitionSampler benes_ar_kernel(double dt);

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

struct EkfStep {
  GaussianBelief prior;
  GaussianBelief posterior;
};

/// Finite-difference Jacobian fallback for ad-hoc models (step 1e-6).
std::function<MatrixXd(const VectorXd&)> numeric_jacobian(
    const std::function<VectorXd(const VectorXd&)>& f, int out_dim,
    double step = 1e-6);

/// Discrete-time extended Kalman filter with local linearization.
/// trace[0] holds the initial belief; one entry per observation follows.
std::vector<EkfStep> exkf_discrete(
    const std::function<VectorXd(const VectorXd&)>& flow,
    const std::function<MatrixXd(const VectorXd&)>& flow_jacobian,
    const MatrixXd& Sigma, const std::function<VectorXd(const VectorXd&)>& h,
    const std::function<MatrixXd(const VectorXd&)>& h_jacobian,
    const MatrixXd& R, const std::vector<VectorXd>& observations,
    const GaussianBelief& init);

struct ContinuousEkfResult {
  std::vector<GaussianBelief> trace;  // one belief per path grid point
  int covariance_repairs = 0;         // symmetrize-and-floor interventions
  int overflow_clamps = 0;            // non-finite states clamped
};

/// Euler-discretized extended Kalman-Bucy filter driven by a cumulative
/// observation path:
///   dm = f(m) dt + C H' R_c^{-1} (dz - h(m) dt)
///   dC = (F C + C F' + Sigma_c - C H' R_c^{-1} H C) dt.
/// Covariances are symmetrized and eigenvalue-floored when they lose positive
/// semidefiniteness; interventions are counted, never silent.
ContinuousEkfResult exkf_continuous(
    const std::function<VectorXd(const VectorXd&)>& drift,
    const std::function<MatrixXd(const VectorXd&)>& drift_jacobian,
    const MatrixXd& Sigma_c, const std::function<VectorXd(const VectorXd&)>& h,
    const std::function<MatrixXd(const VectorXd&)>& h_jacobian,
    const ContinuousObservationPath& path, const GaussianBelief& init);

struct ScalarKalmanStep {
  double prior_mean, prior_var;
  double post_mean, post_var;
};

/// Exact Kalman recursion for the scalar discretized Ornstein-Uhlenbeck model
/// x' = exp(-lambda dt) x + N(0, Sigma_k), y = H x + N(0, R).
std::vector<ScalarKalmanStep> kalman_oracle_ou(
    double lambda, double dt, double sigma_k, double R,
    const std::vector<double>& observations, double m0, double C0,
    double H = 1.0);

/// Sufficient statistics of the Benes-Daum closed-form posterior
/// p(x | y_{1:k}) ~ cosh(x) exp(-(x - m_k)^2 / (2 P_k)).
struct BenesDaumState {
  double m;
  double P;
};

/// Parameter recursion m_k, P_k of the Benes-Daum filter; element 0 is the
/// initial state (m0, P0).
std::vector<BenesDaumState> benes_daum_oracle(
    const std::vector<double>& observations, double sigma2, double dt,
    double m0, double P0);

/// Normalized closed-form density  cosh(x) exp(-(x-m)^2/(2P)) / Z  with
/// Z = sqrt(2 pi P) cosh(m) exp(P/2).
double benes_daum_density(const BenesDaumState& s, double x);

}  // namespace tfilter

#endif
