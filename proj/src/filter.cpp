#include "tfilter/filter.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "tfilter/quadrature.hpp"

namespace tfilter {

LikelihoodVector likelihood_vector(const Partition& p,
                                   const DiscreteObservationModel& obs,
                                   const VectorXd& y,
                                   const LikelihoodOptions& opts) {
  if (y.size() != obs.p)
    throw ConfigError("likelihood_vector: observation dimension mismatch");
  obs.validate();
  Eigen::LLT<MatrixXd> llt(obs.R);
  if (llt.info() != Eigen::Success)
    throw NumericError("likelihood_vector: singular observation covariance");

  auto g_at = [&](const VectorXd& x) {
    const VectorXd r = y - obs.h(x);
    return std::exp(-0.5 * r.dot(llt.solve(r)));
  };

  LikelihoodVector out;
  out.g.resize(p.n_boxes());
  if (!opts.box_averaged) {
    for (Index i = 0; i < p.n_boxes(); ++i) out.g[i] = g_at(p.center(i));
  } else {
    const auto [gx, gw] = gauss_legendre(opts.quad_nodes);
    const int k = opts.quad_nodes;
    const int d = p.dim();
    const Index total = static_cast<Index>(std::pow(static_cast<double>(k), d));
    for (Index i = 0; i < p.n_boxes(); ++i) {
      auto [lo, hi] = p.box_bounds(i);
      double acc = 0.0;
      std::vector<int> node(static_cast<std::size_t>(d), 0);
      for (Index it = 0; it < total; ++it) {
        double wq = 1.0;
        VectorXd x(d);
        for (int a = 0; a < d; ++a) {
          const int na = node[static_cast<std::size_t>(a)];
          x[a] = 0.5 * (lo[a] + hi[a]) +
                 0.5 * (hi[a] - lo[a]) * gx[static_cast<std::size_t>(na)];
          wq *= 0.5 * gw[static_cast<std::size_t>(na)];
        }
        acc += wq * g_at(x);
        for (int a = d - 1; a >= 0; --a) {
          if (++node[static_cast<std::size_t>(a)] < k) break;
          node[static_cast<std::size_t>(a)] = 0;
        }
      }
      out.g[i] = acc;
    }
  }
  out.g_min = out.g.minCoeff();
  out.g_max = out.g.maxCoeff();
  if (opts.floor > 0 && out.g_min < opts.floor) {
    out.g = out.g.cwiseMax(opts.floor);
    out.floor_applied = true;
  }
  return out;
}

WeightVector predict(const WeightVector& w, const TransitionMatrix& tm) {
  if (w.w.size() != tm.n())
    throw ConfigError("predict: weight length " + std::to_string(w.w.size()) +
                      " does not match matrix size " + std::to_string(tm.n()));
  WeightVector out;
  out.w = tm.apply_left(w.w.transpose()).transpose();
  const double before = w.w.sum();
  const double after = out.w.sum();
  if (std::abs(after - before) > 1e-9 * std::max(1.0, std::abs(before)))
    throw NumericError("predict: transport changed total mass from " +
                       std::to_string(before) + " to " + std::to_string(after));
  out.normalized = w.normalized;
  return out;
}

WeightVector predict_nonuniform(const WeightVector& w,
                                const TransitionMatrix& tm,
                                const VectorXd& box_measures) {
  if (w.w.size() != tm.n() || box_measures.size() != tm.n())
    throw ConfigError("predict_nonuniform: size mismatch");
  if ((box_measures.array() <= 0).any())
    throw ConfigError("predict_nonuniform: box measures must be positive");
  const VectorXd mass = w.w.cwiseProduct(box_measures);  // probability per box
  const VectorXd transported =
      tm.apply_left(mass.transpose()).transpose();
  WeightVector out;
  out.w = transported.cwiseQuotient(box_measures);
  out.normalized = w.normalized;
  return out;
}

WeightVector analyze(const Partition& p, const WeightVector& prior,
                     const LikelihoodVector& g) {
  if (prior.w.size() != g.g.size())
    throw ConfigError("analyze: likelihood/weight length mismatch");
  VectorXd reweighted = prior.w.cwiseProduct(g.g);
  const double total = reweighted.sum();
  if (!(total > 0) || !std::isfinite(total))
    throw NumericError(
        "analyze: reweighted density vanished (likelihood floor disabled?)");
  WeightVector out;
  out.w = reweighted / (total * p.box_measure());
  out.normalized = true;
  return out;
}

namespace {

FilterStep make_step(int j, double t, const Partition& p, WeightVector prior,
                     WeightVector posterior, double clamped = 0.0) {
  FilterStep s;
  s.j = j;
  s.t = t;
  const Moments mo = moments(p, posterior);
  s.mean = mo.mean;
  s.cov = mo.cov;
  s.support = 0;
  for (Index i = 0; i < posterior.w.size(); ++i)
    if (posterior.w[i] * p.box_measure() > 1e-12) ++s.support;
  s.prior = std::move(prior);
  s.posterior = std::move(posterior);
  s.clamped_mass = clamped;
  return s;
}

}  // namespace

FilterTrace pfof_run(const TransitionMatrix& tm, const WeightVector& w0,
                     const std::vector<VectorXd>& observations,
                     const DiscreteObservationModel& obs, const Partition& p,
                     double t0, const LikelihoodOptions& lopts) {
  check_partition_match(tm, p);
  validate_weights(p, w0);
  if (!w0.normalized) throw ConfigError("pfof_run: w0 must be normalized");
  const double tau = tm.meta().tau;

  FilterTrace trace;
  trace.steps.push_back(make_step(0, t0, p, w0, w0));
  WeightVector w = w0;
  int j = 0;
  for (const VectorXd& y : observations) {
    ++j;
    WeightVector prior = predict(w, tm);
    const LikelihoodVector g = likelihood_vector(p, obs, y, lopts);
    w = analyze(p, prior, g);
    trace.steps.push_back(
        make_step(j, t0 + j * tau, p, std::move(prior), w));
  }
  return trace;
}

namespace {

// Likelihood factor of the Zakai splitting in log form.
VectorXd zakai_log_gain(const MatrixXd& h_pts, const MatrixXd& R_c,
                        const VectorXd& dz, double tau) {
  Eigen::LLT<MatrixXd> llt(R_c);
  if (llt.info() != Eigen::Success)
    throw NumericError("zakai: singular observation covariance R_c");
  const VectorXd rc_dz = llt.solve(dz);
  VectorXd log_g(h_pts.rows());
  for (Index i = 0; i < h_pts.rows(); ++i) {
    const VectorXd hi = h_pts.row(i).transpose();
    log_g[i] = hi.dot(rc_dz) - 0.5 * tau * hi.dot(llt.solve(hi));
  }
  return log_g;
}

WeightVector zakai_correct(const WeightVector& predicted,
                           const VectorXd& log_g, const Partition& p,
                           double* log_normalizer) {
  const double shift = log_g.maxCoeff();
  VectorXd wv =
      predicted.w.cwiseProduct((log_g.array() - shift).exp().matrix());
  const double s = wv.sum() * p.box_measure();
  if (!(s > 0) || !std::isfinite(s))
    throw NumericError("zakai: weight vector collapsed or overflowed");
  WeightVector out;
  out.w = wv / s;
  out.normalized = true;
  if (log_normalizer) *log_normalizer += std::log(s) + shift;
  return out;
}

}  // namespace

WeightVector zakai_step(const WeightVector& w, const TransitionMatrix& tm,
                        const MatrixXd& h_at_mass_points, const MatrixXd& R_c,
                        const VectorXd& z_increment, double tau,
                        const Partition& p, double* log_normalizer) {
  if (!(tau > 0)) throw ConfigError("zakai_step: tau must be positive");
  if (h_at_mass_points.rows() != tm.n())
    throw ConfigError("zakai_step: h values must cover every mass point");
  const WeightVector predicted = predict(w, tm);
  const VectorXd log_g =
      zakai_log_gain(h_at_mass_points, R_c, z_increment, tau);
  return zakai_correct(predicted, log_g, p, log_normalizer);
}

FilterTrace zakai_run(const TransitionMatrix& tm, const WeightVector& w0,
                      const ContinuousObservationPath& path,
                      const std::function<VectorXd(const VectorXd&)>& h,
                      const Partition& p) {
  check_partition_match(tm, p);
  validate_weights(p, w0);
  if (!w0.normalized) throw ConfigError("zakai_run: w0 must be normalized");
  path.validate();

  MatrixXd h_pts(p.n_boxes(), path.R_c.rows());
  for (Index i = 0; i < p.n_boxes(); ++i)
    h_pts.row(i) = h(p.center(i)).transpose();

  FilterTrace trace;
  trace.steps.push_back(make_step(0, path.times[0], p, w0, w0));
  WeightVector w = w0;
  for (Index j = 1; j < path.times.size(); ++j) {
    const double tau = path.times[j] - path.times[j - 1];
    const VectorXd dz = path.z[static_cast<std::size_t>(j)] -
                        path.z[static_cast<std::size_t>(j - 1)];
    WeightVector prior = predict(w, tm);
    if (!prior.normalized) {
      prior.w /= prior.w.sum() * p.box_measure();
      prior.normalized = true;
    }
    const VectorXd log_g = zakai_log_gain(h_pts, path.R_c, dz, tau);
    w = zakai_correct(prior, log_g, p, &trace.log_normalizer);
    trace.steps.push_back(make_step(static_cast<int>(j), path.times[j], p,
                                    std::move(prior), w));
  }
  return trace;
}

double total_variation(const WeightVector& a, const WeightVector& b,
                       const Partition& p) {
  if (a.w.size() != b.w.size() || a.w.size() != p.n_boxes())
    throw ConfigError("total_variation: partition mismatch");
  if (!a.normalized || !b.normalized)
    throw ConfigError("total_variation: both densities must be normalized");
  const double tv = 0.5 * (a.w - b.w).cwiseAbs().sum() * p.box_measure();
  return std::min(tv, 1.0);
}

double total_variation_vs_density(
    const WeightVector& w, const Partition& p,
    const std::function<double(const VectorXd&)>& rho, int nodes_per_dim) {
  validate_weights(p, w);
  const int d = p.dim();
  const int k = nodes_per_dim;
  const Index total = static_cast<Index>(std::pow(static_cast<double>(k), d));
  double l1 = 0.0, captured = 0.0;
  std::vector<int> node(static_cast<std::size_t>(d), 0);
  for (Index i = 0; i < p.n_boxes(); ++i) {
    auto [lo, hi] = p.box_bounds(i);
    const double wi = w.w[i];
    std::fill(node.begin(), node.end(), 0);
    VectorXd x(d);
    for (Index it = 0; it < total; ++it) {
      double wq = 1.0;
      for (int a = 0; a < d; ++a) {
        const double h = (hi[a] - lo[a]) / (k - 1);
        const int na = node[static_cast<std::size_t>(a)];
        x[a] = lo[a] + na * h;
        wq *= (na == 0 || na == k - 1) ? 0.5 * h : h;
      }
      const double r = rho(x);
      l1 += wq * std::abs(wi - r);
      captured += wq * r;
      for (int a = d - 1; a >= 0; --a) {
        if (++node[static_cast<std::size_t>(a)] < k) break;
        node[static_cast<std::size_t>(a)] = 0;
      }
    }
  }
  const double outside = std::max(0.0, 1.0 - captured);
  return 0.5 * (l1 + outside);
}

}  // namespace tfilter
