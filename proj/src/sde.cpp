#include "tfilter/sde.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace tfilter {

void DiscreteObservationModel::validate() const {
  if (R.rows() != p || R.cols() != p)
    throw ConfigError("DiscreteObservationModel: R must be p x p");
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("DiscreteObservationModel: R is not symmetric");
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success)
    throw ConfigError("DiscreteObservationModel: R is not positive definite");
}

VectorXd DiscreteObservationModel::apply_R_inv(const VectorXd& v) const {
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success)
    throw NumericError("observation covariance R is singular");
  return llt.solve(v);
}

void ContinuousObservationPath::validate() const {
  if (static_cast<Index>(z.size()) != times.size())
    throw ConfigError("ContinuousObservationPath: times/z length mismatch");
  if (z.empty()) throw ConfigError("ContinuousObservationPath: empty path");
  if (z.front().cwiseAbs().maxCoeff() != 0.0)
    throw ConfigError("ContinuousObservationPath: z(0) must be 0");
  for (Index j = 1; j < times.size(); ++j)
    if (!(times[j] > times[j - 1]))
      throw ConfigError("ContinuousObservationPath: times must increase");
}

namespace {

void check_finite(const VectorXd& x, const char* what) {
  if (!x.allFinite())
    throw NumericError(std::string(what) + ": trajectory diverged to non-finite values");
}

}  // namespace

VectorXd euler_maruyama_step(const SdeModel& m, const VectorXd& x, double dt,
                             RngStream& rng) {
  if (!(dt > 0)) throw ConfigError("euler_maruyama_step: dt must be positive");
  VectorXd xi(m.dim);
  for (int d = 0; d < m.dim; ++d) xi[d] = rng.normal();
  VectorXd out = x + m.drift(x) * dt + m.diffusion(x) * (std::sqrt(dt) * xi);
  check_finite(out, "euler_maruyama_step");
  return out;
}

VectorXd flow_sample(const SdeModel& m, const VectorXd& x0, double tau,
                     int substeps, RngStream& rng) {
  if (!(tau > 0)) throw ConfigError("flow_sample: tau must be positive");
  if (substeps < 1) throw ConfigError("flow_sample: substeps must be >= 1");
  if (m.exact_step) {
    VectorXd out = m.exact_step(x0, tau, rng);
    check_finite(out, "flow_sample");
    return out;
  }
  const double dt = tau / substeps;
  VectorXd x = x0;
  for (int s = 0; s < substeps; ++s) x = euler_maruyama_step(m, x, dt, rng);
  return x;
}

double benes_transition_density(double x_prev, double x, double dt) {
  if (!(dt > 0))
    throw ConfigError("benes_transition_density: dt must be positive");
  // log cosh kept stable for large |x|
  auto log_cosh = [](double v) {
    const double a = std::abs(v);
    return a + std::log1p(std::exp(-2.0 * a)) - M_LN2;
  };
  const double d = x - x_prev;
  const double log_p = log_cosh(x) - log_cosh(x_prev) - 0.5 * dt -
                       d * d / (2.0 * dt) -
                       0.5 * std::log(2.0 * M_PI * dt);
  return std::exp(log_p);
}

TruthAndObservations generate_truth_and_observations(
    const SdeModel& m, const DiscreteObservationModel& obs, const VectorXd& x0,
    int J, double dt, int substeps, RngStream& rng) {
  if (J < 1) throw ConfigError("generate_truth_and_observations: J must be >= 1");
  obs.validate();
  Eigen::LLT<MatrixXd> llt(obs.R);
  const MatrixXd noise_chol = llt.matrixL();

  TruthAndObservations out;
  out.states.reserve(static_cast<std::size_t>(J) + 1);
  out.observations.reserve(static_cast<std::size_t>(J));
  out.states.push_back(x0);
  VectorXd x = x0;
  for (int j = 0; j < J; ++j) {
    x = flow_sample(m, x, dt, substeps, rng);
    out.states.push_back(x);
    VectorXd eta(obs.p);
    for (int k = 0; k < obs.p; ++k) eta[k] = rng.normal();
    out.observations.push_back(obs.h(x) + noise_chol * eta);
  }
  return out;
}

ContinuousObservationPath generate_continuous_observation(
    const std::function<VectorXd(const VectorXd&)>& h, int obs_dim,
    double gamma, const std::vector<VectorXd>& truth, double dt, double t0,
    RngStream& rng) {
  if (truth.empty())
    throw ConfigError("generate_continuous_observation: empty truth path");
  ContinuousObservationPath path;
  const Index n = static_cast<Index>(truth.size());
  path.times.resize(n);
  path.z.reserve(truth.size());
  path.R_c = gamma * gamma * MatrixXd::Identity(obs_dim, obs_dim);
  path.gamma = gamma;
  VectorXd z = VectorXd::Zero(obs_dim);
  path.times[0] = t0;
  path.z.push_back(z);
  const double root_dt = std::sqrt(dt);
  for (Index j = 1; j < n; ++j) {
    VectorXd xi(obs_dim);
    for (int k = 0; k < obs_dim; ++k) xi[k] = rng.normal();
    z += h(truth[static_cast<std::size_t>(j - 1)]) * dt + gamma * root_dt * xi;
    path.times[j] = t0 + static_cast<double>(j) * dt;
    path.z.push_back(z);
  }
  return path;
}

}  // namespace tfilter
