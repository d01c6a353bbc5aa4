#include "tfilter/baselines.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace tfilter {

void ParticleEnsemble::validate() const {
  if (static_cast<Index>(positions.size()) != weights.size())
    throw ConfigError("ParticleEnsemble: positions/weights length mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw NumericError("ParticleEnsemble: weights sum to " +
                       std::to_string(weights.sum()));
  for (const auto& x : positions)
    if (!x.allFinite())
      throw NumericError("ParticleEnsemble: non-finite particle position");
}

namespace {

ParticleEnsemble resample_from_points(const ParticleEnsemble& e,
                                      const std::vector<double>& points) {
  const Index n = e.weights.size();
  VectorXd cum(n);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    acc += e.weights[i];
    cum[i] = acc;
  }
  cum[n - 1] = 1.0;

  ParticleEnsemble out;
  const int m = static_cast<int>(points.size());
  out.positions.reserve(points.size());
  out.weights = VectorXd::Constant(m, 1.0 / m);
  for (double u : points) {
    const double* it = std::lower_bound(cum.data(), cum.data() + n, u);
    Index idx = static_cast<Index>(it - cum.data());
    if (idx >= n) idx = n - 1;
    out.positions.push_back(e.positions[static_cast<std::size_t>(idx)]);
  }
  return out;
}

}  // namespace

ParticleEnsemble multinomial_resample(const ParticleEnsemble& e, int m,
                                      RngStream& rng) {
  if (m < 1) throw ConfigError("multinomial_resample: m must be >= 1");
  std::vector<double> u(static_cast<std::size_t>(m));
  for (auto& v : u) v = rng.uniform();
  return resample_from_points(e, u);
}

ParticleEnsemble systematic_resample(const ParticleEnsemble& e, int m,
                                     RngStream& rng) {
  if (m < 1) throw ConfigError("systematic_resample: m must be >= 1");
  const double u0 = rng.uniform() / m;
  std::vector<double> u(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k)
    u[static_cast<std::size_t>(k)] = u0 + static_cast<double>(k) / m;
  return resample_from_points(e, u);
}

std::vector<ParticleEnsemble> sir_pf_run(
    const TransitionSampler& kernel, const DiscreteObservationModel& obs,
    const std::vector<VectorXd>& observations, int m,
    const InitialSampler& mu0, RngStream& rng, const SirOptions& opts) {
  if (m < 1) throw ConfigError("sir_pf_run: particle count must be >= 1");
  obs.validate();
  Eigen::LLT<MatrixXd> llt(obs.R);

  auto g_at = [&](const VectorXd& y, const VectorXd& x) {
    const VectorXd r = y - obs.h(x);
    return std::exp(-0.5 * r.dot(llt.solve(r)));
  };

  std::vector<ParticleEnsemble> trace;
  trace.reserve(observations.size() + 1);
  {
    ParticleEnsemble init;
    RngStream r0 = rng.split(0);
    init.positions.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) init.positions.push_back(mu0(r0));
    init.weights = VectorXd::Constant(m, 1.0 / m);
    trace.push_back(std::move(init));
  }

  int j = 0;
  for (const VectorXd& y : observations) {
    ++j;
    RngStream step_rng = rng.split(static_cast<std::uint64_t>(j));
    const ParticleEnsemble& cur = trace.back();

    bool do_resample = true;
    if (opts.ess_trigger >= 0) {
      const double ess = 1.0 / cur.weights.squaredNorm();
      do_resample = ess < opts.ess_trigger * m;
    }
    ParticleEnsemble base;
    if (do_resample) {
      RngStream rs = step_rng.split(0);
      base = opts.resample == ResampleKind::multinomial
                 ? multinomial_resample(cur, m, rs)
                 : systematic_resample(cur, m, rs);
    } else {
      base = cur;
    }

    ParticleEnsemble next;
    next.positions.resize(static_cast<std::size_t>(m));
    VectorXd g(m);
    for (int i = 0; i < m; ++i) {
      RngStream pr = step_rng.split(static_cast<std::uint64_t>(i) + 1);
      next.positions[static_cast<std::size_t>(i)] =
          kernel(base.positions[static_cast<std::size_t>(i)], pr);
      g[i] = g_at(y, next.positions[static_cast<std::size_t>(i)]);
    }
    if (opts.likelihood_floor > 0 && g.maxCoeff() < opts.likelihood_floor)
      throw NumericError("sir_pf_run: weight collapse at step " +
                         std::to_string(j) +
                         " (all likelihoods below the floor)");
    const VectorXd raw =
        g.cwiseMax(opts.likelihood_floor).cwiseProduct(base.weights);
    const double total = raw.sum();
    if (!(total > 0) || !std::isfinite(total))
      throw NumericError("sir_pf_run: weight collapse at step " +
                         std::to_string(j));
    next.weights = raw / total;
    trace.push_back(std::move(next));
  }
  return trace;
}

WeightVector bin_particles(const ParticleEnsemble& e, const Partition& p,
                           double* lost_mass) {
  e.validate();
  WeightVector out;
  out.w = VectorXd::Zero(p.n_boxes());
  double lost = 0.0;
  for (std::size_t i = 0; i < e.positions.size(); ++i) {
    const auto box = p.locate(e.positions[i]);
    if (box)
      out.w[*box] += e.weights[static_cast<Index>(i)];
    else
      lost += e.weights[static_cast<Index>(i)];
  }
  if (lost_mass) *lost_mass = lost;
  const double kept = out.w.sum();
  if (!(kept > 0))
    throw NumericError("bin_particles: every particle is outside the domain");
  out.w /= kept * p.box_measure();
  out.normalized = true;
  return out;
}

double acceptance_rejection_sample(
    const std::function<double(double)>& target,
    const std::function<double(RngStream&)>& proposal_sampler,
    const std::function<double(double)>& proposal_density, double bound,
    RngStream& rng) {
  if (!(bound > 0)) throw ConfigError("acceptance_rejection_sample: bound must be positive");
  constexpr int kMaxTrials = 10000;  // acceptance rate 1e-4 cutoff
  for (int trial = 0; trial < kMaxTrials; ++trial) {
    const double x = proposal_sampler(rng);
    const double q = proposal_density(x);
    if (!(q > 0))
      throw NumericError(
          "acceptance_rejection_sample: proposal density vanished at x = " +
          std::to_string(x));
    const double ratio = target(x) / (bound * q);
    if (ratio > 1.0 + 1e-9)
      throw NumericError(
          "acceptance_rejection_sample: envelope violated at x = " +
          std::to_string(x) + " (target/proposal ratio " +
          std::to_string(ratio * bound) + " above bound " +
          std::to_string(bound) + ")");
    if (rng.uniform() <= ratio) return x;
  }
  throw NumericError(
      "acceptance_rejection_sample: acceptance rate below 1e-4 after " +
      std::to_string(kMaxTrials) + " proposals");
}

TransitionSampler benes_ar_kernel(double dt) {
  if (!(dt > 0)) throw ConfigError("benes_ar_kernel: dt must be positive");
  const double bound = M_SQRT2 * std::exp(0.5 * dt);
  return [dt, bound](const VectorXd& x_prev, RngStream& rng) {
    const double x0 = x_prev[0];
    const double sd = std::sqrt(2.0 * dt);
    auto sample = [x0, sd](RngStream& r) { return x0 + sd * r.normal(); };
    auto density = [x0, dt](double x) {
      return normal_pdf(x, x0, 2.0 * dt);
    };
    auto target = [x0, dt](double x) {
      return benes_transition_density(x0, x, dt);
    };
    VectorXd out(1);
    out[0] = acceptance_rejection_sample(target, sample, density, bound, rng);
    return out;
  };
}

std::function<MatrixXd(const VectorXd&)> numeric_jacobian(
    const std::function<VectorXd(const VectorXd&)>& f, int out_dim,
    double step) {
  return [f, out_dim, step](const VectorXd& x) {
    MatrixXd J(out_dim, x.size());
    for (Index k = 0; k < x.size(); ++k) {
      VectorXd xp = x, xm = x;
      xp[k] += step;
      xm[k] -= step;
      J.col(k) = (f(xp) - f(xm)) / (2.0 * step);
    }
    return J;
  };
}

std::vector<EkfStep> exkf_discrete(
    const std::function<VectorXd(const VectorXd&)>& flow,
    const std::function<MatrixXd(const VectorXd&)>& flow_jacobian,
    const MatrixXd& Sigma, const std::function<VectorXd(const VectorXd&)>& h,
    const std::function<MatrixXd(const VectorXd&)>& h_jacobian,
    const MatrixXd& R, const std::vector<VectorXd>& observations,
    const GaussianBelief& init) {
  std::vector<EkfStep> trace;
  trace.reserve(observations.size() + 1);
  trace.push_back({init, init});

  VectorXd m = init.mean;
  MatrixXd C = init.cov;
  const Index n = m.size();
  for (const VectorXd& y : observations) {
    const MatrixXd F = flow_jacobian(m);
    if (!F.allFinite())
      throw NumericError("exkf_discrete: non-finite flow Jacobian");
    const VectorXd m_prior = flow(m);
    MatrixXd C_prior = F * C * F.transpose() + Sigma;
    C_prior = 0.5 * (C_prior + C_prior.transpose());

    const MatrixXd H = h_jacobian(m_prior);
    const MatrixXd S = H * C_prior * H.transpose() + R;
    Eigen::LLT<MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw NumericError("exkf_discrete: singular innovation covariance");
    const MatrixXd K = llt.solve(H * C_prior).transpose();
    m = m_prior + K * (y - h(m_prior));
    C = (MatrixXd::Identity(n, n) - K * H) * C_prior;
    C = 0.5 * (C + C.transpose());
    trace.push_back({{m_prior, C_prior}, {m, C}});
  }
  return trace;
}

ContinuousEkfResult exkf_continuous(
    const std::function<VectorXd(const VectorXd&)>& drift,
    const std::function<MatrixXd(const VectorXd&)>& drift_jacobian,
    const MatrixXd& Sigma_c, const std::function<VectorXd(const VectorXd&)>& h,
    const std::function<MatrixXd(const VectorXd&)>& h_jacobian,
    const ContinuousObservationPath& path, const GaussianBelief& init) {
  path.validate();
  Eigen::LLT<MatrixXd> rc(path.R_c);
  if (rc.info() != Eigen::Success)
    throw NumericError("exkf_continuous: singular observation covariance");

  ContinuousEkfResult out;
  out.trace.reserve(path.z.size());
  out.trace.push_back(init);

  VectorXd m = init.mean;
  MatrixXd C = init.cov;
  const Index n = m.size();
  constexpr double kStateCap = 1e8;

  for (Index j = 1; j < path.times.size(); ++j) {
    const double dt = path.times[j] - path.times[j - 1];
    const VectorXd dz = path.z[static_cast<std::size_t>(j)] -
                        path.z[static_cast<std::size_t>(j - 1)];
    const MatrixXd F = drift_jacobian(m);
    const MatrixXd H = h_jacobian(m);
    const MatrixXd gain = C * H.transpose() * rc.solve(
        MatrixXd::Identity(H.rows(), H.rows()));

    m += drift(m) * dt + gain * (dz - h(m) * dt);
    C += (F * C + C * F.transpose() + Sigma_c -
          gain * H * C) * dt;
    C = 0.5 * (C + C.transpose());

    // keep instability observable rather than fatal
    if (!m.allFinite() || !C.allFinite()) {
      ++out.overflow_clamps;
      for (Index k = 0; k < n; ++k) {
        if (!std::isfinite(m[k])) m[k] = std::copysign(kStateCap, m[k]);
        m[k] = std::clamp(m[k], -kStateCap, kStateCap);
      }
      for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b)
          if (!std::isfinite(C(a, b)))
            C(a, b) = a == b ? kStateCap : 0.0;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(C);
    if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() < -1e-10) {
      ++out.covariance_repairs;
      const VectorXd floored = es.eigenvalues().cwiseMax(0.0);
      C = es.eigenvectors() * floored.asDiagonal() *
          es.eigenvectors().transpose();
    }
    out.trace.push_back({m, C});
  }
  return out;
}

std::vector<ScalarKalmanStep> kalman_oracle_ou(
    double lambda, double dt, double sigma_k, double R,
    const std::vector<double>& observations, double m0, double C0, double H) {
  const double a = std::exp(-lambda * dt);
  std::vector<ScalarKalmanStep> trace;
  trace.reserve(observations.size() + 1);
  trace.push_back({m0, C0, m0, C0});
  double m = m0, P = C0;
  for (double y : observations) {
    const double mp = a * m;
    const double Pp = a * a * P + sigma_k;
    const double S = H * H * Pp + R;
    const double K = Pp * H / S;
    m = mp + K * (y - H * mp);
    P = (1.0 - K * H) * Pp;
    trace.push_back({mp, Pp, m, P});
  }
  return trace;
}

std::vector<BenesDaumState> benes_daum_oracle(
    const std::vector<double>& observations, double sigma2, double dt,
    double m0, double P0) {
  if (!(P0 > 0)) throw ConfigError("benes_daum_oracle: P0 must be positive");
  std::vector<BenesDaumState> trace;
  trace.reserve(observations.size() + 1);
  trace.push_back({m0, P0});
  double m = m0, P = P0;
  for (double y : observations) {
    const double m_prior = m;
    const double P_prior = P + dt;
    const double K = P_prior / (P_prior + sigma2);
    m = m_prior + K * (y - m_prior);
    P = (1.0 - K) * P_prior;
    trace.push_back({m, P});
  }
  return trace;
}

double benes_daum_density(const BenesDaumState& s, double x) {
  auto log_cosh = [](double v) {
    const double a = std::abs(v);
    return a + std::log1p(std::exp(-2.0 * a)) - M_LN2;
  };
  // Z = sqrt(2 pi P) cosh(m) exp(P/2), from
  // int exp(+-x) exp(-(x-m)^2/(2P)) dx = sqrt(2 pi P) exp(+-m + P/2).
  const double log_z =
      0.5 * std::log(2.0 * M_PI * s.P) + log_cosh(s.m) + 0.5 * s.P;
  const double d = x - s.m;
  return std::exp(log_cosh(x) - d * d / (2.0 * s.P) - log_z);
}

}  // namespace tfilter
