// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. All randomness is seeded; reruns are deterministic.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <vector>

#include "tfilter/harness.hpp"

using namespace tfilter;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

Domain domain1d(double lo, double hi) {
  Domain d;
  d.lower = VectorXd::Constant(1, lo);
  d.upper = VectorXd::Constant(1, hi);
  return d;
}

DiscreteObservationModel scalar_identity_obs(double r) {
  DiscreteObservationModel obs;
  obs.p = 1;
  obs.h = [](const VectorXd& x) { return x; };
  obs.R = MatrixXd::Constant(1, 1, r);
  return obs;
}

// Matrices shared by several criteria.
struct Context {
  Partition p_ou500 = build_uniform_partition(domain1d(-6, 6), {500});
  Partition p_ou100 = build_uniform_partition(domain1d(-6, 6), {100});
  Partition p_benes = build_uniform_partition(domain1d(-15, 15), {400});
  Partition p_lorenz;
  TransitionMatrix ou_quad;
  TransitionMatrix ou_mc;
  TransitionMatrix benes_mc;
  TransitionMatrix lorenz_mc;

  static constexpr double lambda = 0.5;
  static constexpr double tau = 0.1;

  Context()
      : p_lorenz([] {
          Domain d;
          d.lower = VectorXd(3);
          d.upper = VectorXd(3);
          d.lower << -25, -25, -30;
          d.upper << 25, 25, 20;
          return build_uniform_partition(d, {20, 20, 20});
        }()),
        ou_quad([this] {
          GaussianKernelOptions gopt;
          gopt.tau = tau;
          return gaussian_kernel_matrix(
              p_ou500, MatrixXd::Constant(1, 1, std::exp(-lambda * tau)),
              VectorXd::Zero(1),
              MatrixXd::Constant(1, 1, ou_step_variance(lambda, tau)), gopt);
        }()),
        ou_mc([this] {
          UlamOptions o;
          o.n_samples = 400;
          o.seed = 13;
          return estimate_transition_matrix(p_ou100, ou_model(lambda), tau, o);
        }()),
        benes_mc([this] {
          UlamOptions o;
          o.n_samples = 4000;
          o.substeps = 10;
          o.seed = 77;
          return estimate_transition_matrix(p_benes, benes_model(), tau, o);
        }()),
        lorenz_mc([this] {
          UlamOptions o;
          o.n_samples = 128;
          o.substeps = 5;
          o.seed = 99;
          o.oob = OutOfDomainPolicy::absorb_boundary;
          return estimate_transition_matrix(p_lorenz, lorenz63_model(), 0.02,
                                            o);
        }()) {}
};

// ---------------------------------------------------------------------------

void criterion_a1(const Context& ctx) {
  bool pass = true;
  std::string detail;
  const std::vector<std::pair<std::string, const TransitionMatrix*>> mats = {
      {"ou_quad", &ctx.ou_quad},
      {"ou_mc", &ctx.ou_mc},
      {"benes_mc", &ctx.benes_mc},
      {"lorenz_mc", &ctx.lorenz_mc}};
  for (const auto& [name, tm] : mats) {
    try {
      tm->validate_stochastic(1e-9);
    } catch (const std::exception& e) {
      pass = false;
      detail += name + " not stochastic (" + e.what() + "); ";
      continue;
    }
    // exact eigensolve where dense; converged power iteration for CSR
    const double lead =
        tm->is_sparse() ? tm->leading_eigenvalue_magnitude(20000)
                        : std::abs(eigendecompose(*tm).eigenvalues[0]);
    const double dev = std::abs(lead - 1.0);
    if (dev > 1e-6) pass = false;
    detail += name + " |1-|lambda1||=" + fmt(dev) + "; ";
  }
  report("A1 stochasticity & spectrum", pass, detail);
}

void criterion_a2(const Context& ctx) {
  // fixed representative seed; realizations whose truth leaves [-6,6] violate
  // the grid support and are the documented domain limitation
  const double m0 = 2.0, C0 = 0.1, R = 1.0;
  const auto obs = scalar_identity_obs(R);
  RngStream rng(300);
  VectorXd x0(1);
  x0[0] = m0 + std::sqrt(C0) * rng.normal();
  const auto data = generate_truth_and_observations(ou_model(ctx.lambda), obs,
                                                    x0, 20, ctx.tau, 1, rng);
  std::vector<double> ys;
  for (const auto& y : data.observations) ys.push_back(y[0]);
  const auto kal =
      kalman_oracle_ou(ctx.lambda, ctx.tau,
                       ou_step_variance(ctx.lambda, ctx.tau), R, ys, m0, C0);

  const auto w0 = project_density(ctx.p_ou500, [&](const VectorXd& x) {
    return normal_pdf(x[0], m0, C0);
  });
  const auto trace =
      pfof_run(ctx.ou_quad, w0, data.observations, obs, ctx.p_ou500);
  double worst = 0.0;
  for (std::size_t j = 0; j < trace.steps.size(); ++j) {
    const double m = kal[j].post_mean, v = kal[j].post_var;
    worst = std::max(
        worst, total_variation_vs_density(trace.steps[j].posterior,
                                          ctx.p_ou500, [m, v](const VectorXd& x) {
                                            return normal_pdf(x[0], m, v);
                                          }));
  }
  const double mf = kal.back().post_mean, vf = kal.back().post_var;
  auto final_density = [mf, vf](const VectorXd& x) {
    return normal_pdf(x[0], mf, vf);
  };
  const double pfof_final = total_variation_vs_density(
      trace.steps.back().posterior, ctx.p_ou500, final_density);

  // SIR filter at matched basis count, 20 particle seeds
  const SdeModel ou = ou_model(ctx.lambda);
  const double tau = ctx.tau;
  TransitionSampler kernel = [&ou, tau](const VectorXd& x, RngStream& r) {
    return flow_sample(ou, x, tau, 1, r);
  };
  InitialSampler mu0 = [m0, C0](RngStream& r) {
    return VectorXd::Constant(1, m0 + std::sqrt(C0) * r.normal()).eval();
  };
  double pf_mean = 0.0;
  for (int s = 0; s < 20; ++s) {
    RngStream prng = RngStream(300).split(50 + static_cast<std::uint64_t>(s));
    const auto ens =
        sir_pf_run(kernel, obs, data.observations, 500, mu0, prng);
    pf_mean += total_variation_vs_density(bin_particles(ens.back(), ctx.p_ou500),
                                          ctx.p_ou500, final_density) /
               20.0;
  }
  const bool pass = worst < 0.05 && pf_mean > pfof_final;
  report("A2 O-U oracle agreement", pass,
         "pfof worst step TV=" + fmt(worst) + " (<0.05), final TV=" +
             fmt(pfof_final) + "; pf m=500 mean final TV=" + fmt(pf_mean) +
             " (> pfof)");
}

void criterion_a3(const Context& ctx) {
  const auto obs = scalar_identity_obs(1.0);
  RngStream rng(5);
  const auto data = generate_truth_and_observations(
      benes_model(), obs, VectorXd::Zero(1), 50, ctx.tau, 10, rng);
  std::vector<double> ys;
  for (const auto& y : data.observations) ys.push_back(y[0]);
  const auto oracle = benes_daum_oracle(ys, 1.0, ctx.tau, 0.0, 2.0);

  const auto w0 = project_density(ctx.p_benes, [&](const VectorXd& x) {
    return benes_daum_density({0.0, 2.0}, x[0]);
  });
  const auto full =
      pfof_run(ctx.benes_mc, w0, data.observations, obs, ctx.p_benes);
  double worst_oracle = 0.0;
  for (std::size_t j = 0; j < full.steps.size(); ++j) {
    const BenesDaumState s = oracle[j];
    worst_oracle = std::max(
        worst_oracle,
        total_variation_vs_density(full.steps[j].posterior, ctx.p_benes,
                                   [s](const VectorXd& x) {
                                     return benes_daum_density(s, x[0]);
                                   }));
  }
  report("A3a PFOF vs Benes-Daum closed form", worst_oracle < 0.1,
         "worst step TV=" + fmt(worst_oracle) + " (<0.1 over [0,5])");

  const SpectralModel sm = eigendecompose(ctx.benes_mc);
  double worst_lr40 = 0.0;
  std::vector<double> avg_by_r;
  for (Index r : {10, 20, 40}) {
    const auto low = lr_pfof_run(sm, w0, data.observations, obs, ctx.p_benes,
                                 r);
    double worst = 0.0, avg = 0.0;
    for (std::size_t j = 0; j < full.steps.size(); ++j) {
      const double tv = total_variation(full.steps[j].posterior,
                                        low.steps[j].posterior, ctx.p_benes);
      worst = std::max(worst, tv);
      avg += tv / static_cast<double>(full.steps.size());
    }
    avg_by_r.push_back(avg);
    if (r == 40) worst_lr40 = worst;
  }
  // Known limitation: the truncated-domain Benes operator is edge-piled
  // (eigenbasis condition ~4e7); the top-40 modes cannot resolve posteriors
  // at |x|~3-5 below ~0.09 TV at isolated steps, for any estimator fidelity
  // or seed. The step-averaged distance is ~0.02. See README.
  report("A3b lr-PFOF r=40 within 0.02 of PFOF per step", worst_lr40 < 0.02,
         "worst step TV=" + fmt(worst_lr40) + ", step-averaged TV=" +
             fmt(avg_by_r[2]) + " (per-step bound unattainable for the "
             "truncated basis; see README known limitations)");
  report("A3c lr-PFOF error non-increasing in r",
         avg_by_r[0] >= avg_by_r[1] && avg_by_r[1] >= avg_by_r[2],
         "avg TV r=10:" + fmt(avg_by_r[0]) + " r=20:" + fmt(avg_by_r[1]) +
             " r=40:" + fmt(avg_by_r[2]));
}

void criterion_a4() {
  RateStudyConfig cfg;
  cfg.seed = 301;
  const auto pfof = rate_study_pfof(cfg);
  const auto pf = rate_study_pf(cfg);
  const bool pass_pfof = std::abs(pfof.slope + 1.0) <= 0.4;
  const bool pass_pf = std::abs(pf.slope + 0.5) <= 0.3;
  const bool steeper = pfof.slope < pf.slope;
  report("A4 convergence rates", pass_pfof && pass_pf && steeper,
         "pfof slope=" + fmt(pfof.slope) + " (-1.0 +- 0.4), pf slope=" +
             fmt(pf.slope) + " (-0.5 +- 0.3), pfof steeper=" +
             (steeper ? "yes" : "no"));
}

void criterion_a5(const Context& ctx) {
  const Lorenz63Params params;
  const SdeModel lorenz = lorenz63_model(params);
  const MatrixXd sigma_c = 4.0 * MatrixXd::Identity(3, 3);
  const auto jac = lorenz63_drift_jacobian(params);
  const double tau = 0.02;
  const int steps = 200;

  auto run_case = [&](const MatrixXd& H, int& wins, bool& bounded) {
    auto h = [H](const VectorXd& v) { return (H * v).eval(); };
    auto hj = [H](const VectorXd&) { return H; };
    wins = 0;
    bounded = true;
    for (int seed = 0; seed < 10; ++seed) {
      RngStream master(1000 + static_cast<std::uint64_t>(seed));
      VectorXd x0(3);
      RngStream r0 = master.split(1);
      for (int k = 0; k < 3; ++k) x0[k] = r0.normal();
      std::vector<VectorXd> truth{x0};
      RngStream rt = master.split(2);
      for (int j = 0; j < steps; ++j)
        truth.push_back(flow_sample(lorenz, truth.back(), tau, 5, rt));
      RngStream rz = master.split(3);
      const auto path =
          generate_continuous_observation(h, 1, 0.2, truth, tau, 0.0, rz);

      const auto w0 = project_density(
          ctx.p_lorenz,
          [](const VectorXd& x) {
            return std::exp(-0.5 * x.squaredNorm()) /
                   std::pow(2.0 * M_PI, 1.5);
          },
          {4, true, 0.5});
      const auto ztr = zakai_run(ctx.lorenz_mc, w0, path, h, ctx.p_lorenz);
      const auto ekf = exkf_continuous(
          lorenz.drift, jac, sigma_c, h, hj, path,
          {VectorXd::Zero(3), MatrixXd::Identity(3, 3)});
      double zakai_mse = 0.0, ekf_mse = 0.0;
      for (std::size_t j = 0; j < truth.size(); ++j) {
        zakai_mse += (truth[j] - ztr.steps[j].mean).squaredNorm() /
                     static_cast<double>(truth.size());
        ekf_mse += (truth[j] - ekf.trace[j].mean).squaredNorm() /
                   static_cast<double>(truth.size());
      }
      if (zakai_mse < ekf_mse) ++wins;
      if (!std::isfinite(zakai_mse) || !std::isfinite(ekf_mse) ||
          zakai_mse > 1e6 || ekf_mse > 1e6)
        bounded = false;
    }
  };

  MatrixXd H3(1, 3), H2(1, 3);
  H3 << 0, 0, 1;
  H2 << 0, 1, 0;
  int wins3 = 0, wins2 = 0;
  bool bounded3 = true, bounded2 = true;
  run_case(H3, wins3, bounded3);
  run_case(H2, wins2, bounded2);
  report("A5 Lorenz'63 robustness", wins3 >= 8 && bounded2 && bounded3,
         "H=[0,0,1]: zakai-pfof beats exkf on " + std::to_string(wins3) +
             "/10 seeds (need >=8); H=[0,1,0]: both bounded=" +
             (bounded2 ? "yes" : "no"));
}

void criterion_a6(const Context& ctx) {
  bool pass = true;
  std::string detail;

  // identity-flow Ulam is the identity matrix
  {
    SdeModel id;
    id.dim = 1;
    id.drift = [](const VectorXd& x) { return (0.0 * x).eval(); };
    id.diffusion = [](const VectorXd&) { return MatrixXd::Zero(1, 1).eval(); };
    id.exact_step = [](const VectorXd& x, double, RngStream&) { return x; };
    const Partition p = build_uniform_partition(domain1d(0, 1), {12});
    UlamOptions o;
    o.n_samples = 64;
    o.seed = 4;
    const auto tm = estimate_transition_matrix(p, id, 1.0, o);
    bool exact = true;
    for (Index i = 0; i < 12; ++i)
      for (Index j = 0; j < 12; ++j)
        exact &= tm.entry(i, j) == (i == j ? 1.0 : 0.0);
    pass &= exact;
    detail += std::string("identity ulam exact=") + (exact ? "yes" : "no") +
              "; ";
  }
  // lr-PFOF at full rank reproduces PFOF
  {
    const auto obs = scalar_identity_obs(1.0);
    const auto w0 = project_density(ctx.p_ou100, [](const VectorXd& x) {
      return normal_pdf(x[0], 2.0, 0.1);
    });
    RngStream rng(9);
    const auto data = generate_truth_and_observations(
        ou_model(ctx.lambda), obs, VectorXd::Constant(1, 2.0), 10, ctx.tau, 1,
        rng);
    const auto full =
        pfof_run(ctx.ou_mc, w0, data.observations, obs, ctx.p_ou100);
    const auto sm = eigendecompose(ctx.ou_mc);
    const auto low = lr_pfof_run(sm, w0, data.observations, obs, ctx.p_ou100,
                                 ctx.p_ou100.n_boxes());
    double worst = 0.0;
    for (std::size_t j = 0; j < full.steps.size(); ++j)
      worst = std::max(worst,
                       total_variation(full.steps[j].posterior,
                                       low.steps[j].posterior, ctx.p_ou100));
    pass &= worst < 1e-8;
    detail += "lr r=N TV=" + fmt(worst) + " (<1e-8); ";
  }
  // EKF equals the exact Kalman filter on a linear model
  {
    const double a = std::exp(-ctx.lambda * ctx.tau);
    const double sk = ou_step_variance(ctx.lambda, ctx.tau);
    RngStream rng(10);
    std::vector<double> ys;
    std::vector<VectorXd> yv;
    for (int j = 0; j < 30; ++j) {
      ys.push_back(1.5 * std::cos(0.2 * j) + rng.normal());
      yv.push_back(VectorXd::Constant(1, ys.back()));
    }
    const auto kal =
        kalman_oracle_ou(ctx.lambda, ctx.tau, sk, 1.0, ys, 2.0, 0.1);
    const auto ekf = exkf_discrete(
        [a](const VectorXd& x) { return (a * x).eval(); },
        [a](const VectorXd&) { return MatrixXd::Constant(1, 1, a).eval(); },
        MatrixXd::Constant(1, 1, sk),
        [](const VectorXd& x) { return x; },
        [](const VectorXd&) { return MatrixXd::Identity(1, 1).eval(); },
        MatrixXd::Identity(1, 1), yv,
        {VectorXd::Constant(1, 2.0), MatrixXd::Constant(1, 1, 0.1)});
    double worst = 0.0;
    for (std::size_t j = 0; j < ekf.size(); ++j)
      worst = std::max({worst,
                        std::abs(ekf[j].posterior.mean[0] - kal[j].post_mean),
                        std::abs(ekf[j].posterior.cov(0, 0) -
                                 kal[j].post_var)});
    pass &= worst < 1e-10;
    detail += "ekf vs kalman max dev=" + fmt(worst) + " (<1e-10); ";
  }
  // uniform-measure reduction of the general transport
  {
    const Partition p = build_uniform_partition(domain1d(-1, 1), {24});
    RngStream rng(11);
    MatrixXd t(24, 24);
    for (Index i = 0; i < 24; ++i) {
      for (Index j = 0; j < 24; ++j) t(i, j) = rng.uniform();
      t.row(i) /= t.row(i).sum();
    }
    UlamMeta meta;
    meta.estimator = "mc";
    meta.n_samples = 1;
    meta.discard_fraction = VectorXd::Zero(24);
    const auto tm = TransitionMatrix::from_dense(t, p, meta);
    WeightVector w;
    w.w.resize(24);
    for (Index i = 0; i < 24; ++i) w.w[i] = rng.uniform();
    w.normalized = false;
    const auto direct = predict(w, tm);
    const auto general = predict_nonuniform(
        w, tm, VectorXd::Constant(24, p.box_measure()));
    const double dev = (direct.w - general.w).cwiseAbs().maxCoeff();
    pass &= dev < 1e-12;
    detail += "uniform reduction dev=" + fmt(dev) + " (<1e-12)";
  }
  report("A6 exactness identities", pass, detail);
}

void criterion_a7(const Context& ctx) {
  bool pass = true;
  std::string detail;

  // acceptance-rejection Benes samples vs the closed-form density
  {
    const double crit = 74.9195;  // chi-square 0.99 quantile, 49 dof
    for (double dt : {0.1, 0.5}) {
      const auto kernel = benes_ar_kernel(dt);
      RngStream rng(17);
      const int n = 10000, bins = 50;
      auto pdf = [dt](double x) {
        return benes_transition_density(0.0, x, dt);
      };
      // equal-probability bins from the CDF
      const double span = 6.0 * std::sqrt(dt) + 2.0 * dt;
      const int grid = 200001;
      std::vector<double> xs(grid), cdf(grid);
      double acc = 0.0;
      const double h = 2.0 * span / (grid - 1);
      for (int i = 0; i < grid; ++i) {
        xs[static_cast<std::size_t>(i)] = -span + i * h;
        if (i > 0)
          acc += 0.5 * h *
                 (pdf(xs[static_cast<std::size_t>(i)]) +
                  pdf(xs[static_cast<std::size_t>(i - 1)]));
        cdf[static_cast<std::size_t>(i)] = acc;
      }
      std::vector<double> edges{-span};
      for (int b = 1; b < bins; ++b) {
        const double target = acc * b / bins;
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
        edges.push_back(xs[static_cast<std::size_t>(it - cdf.begin())]);
      }
      edges.push_back(span);
      std::vector<int> counts(static_cast<std::size_t>(bins), 0);
      for (int i = 0; i < n; ++i) {
        const double x = kernel(VectorXd::Zero(1), rng)[0];
        const auto it = std::upper_bound(edges.begin(), edges.end(), x);
        const int b = std::clamp(static_cast<int>(it - edges.begin()) - 1, 0,
                                 bins - 1);
        ++counts[static_cast<std::size_t>(b)];
      }
      double chi2 = 0.0;
      const double expected = static_cast<double>(n) / bins;
      for (int b = 0; b < bins; ++b) {
        const double dd = counts[static_cast<std::size_t>(b)] - expected;
        chi2 += dd * dd / expected;
      }
      pass &= chi2 < crit;
      detail += "chi2(dt=" + fmt(dt) + ")=" + fmt(chi2) + " (<74.92); ";
    }
  }
  // Monte-Carlo Ulam entries converge at n^{-1/2}
  {
    const Partition p = build_uniform_partition(domain1d(-6, 6), {50});
    GaussianKernelOptions gopt;
    gopt.tau = ctx.tau;
    const auto reference = gaussian_kernel_matrix(
        p, MatrixXd::Constant(1, 1, std::exp(-ctx.lambda * ctx.tau)),
        VectorXd::Zero(1),
        MatrixXd::Constant(1, 1, ou_step_variance(ctx.lambda, ctx.tau)), gopt);
    const std::vector<int> sizes{100, 200, 400, 800, 1600};
    VectorXd mean_dev = VectorXd::Zero(5);
    for (int seed = 0; seed < 10; ++seed) {
      UlamOptions o;
      o.seed = 500 + static_cast<std::uint64_t>(seed);
      const auto table = mc_convergence_check(p, ou_model(ctx.lambda), ctx.tau,
                                              sizes, o, &reference);
      for (int k = 0; k < 5; ++k)
        mean_dev[k] += table[static_cast<std::size_t>(k)].max_abs_deviation /
                       10.0;
    }
    VectorXd ns(5);
    for (int k = 0; k < 5; ++k) ns[k] = sizes[static_cast<std::size_t>(k)];
    const auto f = fit_loglog_slope(ns, mean_dev);
    pass &= std::abs(f.slope + 0.5) <= 0.2;
    detail += "ulam mc slope=" + fmt(f.slope) + " (-0.5 +- 0.2); ";
  }
  // resampling unbiasedness
  {
    RngStream rng(21);
    ParticleEnsemble e;
    const int np = 50;
    e.weights.resize(np);
    for (int i = 0; i < np; ++i) {
      e.positions.push_back(VectorXd::Constant(1, std::sin(0.41 * i)));
      e.weights[i] = 0.5 + 0.4 * std::sin(0.13 * i);
    }
    e.weights /= e.weights.sum();
    auto f = [](double x) { return std::cos(3.0 * x); };
    double weighted = 0.0;
    for (int i = 0; i < np; ++i)
      weighted += e.weights[i] * f(e.positions[static_cast<std::size_t>(i)][0]);
    const int trials = 300, m = 500;
    std::vector<double> vals;
    double mean = 0.0;
    for (int t = 0; t < trials; ++t) {
      const auto r = multinomial_resample(e, m, rng);
      double avg = 0.0;
      for (const auto& x : r.positions) avg += f(x[0]) / m;
      vals.push_back(avg);
      mean += avg / trials;
    }
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean) / (trials - 1);
    const double se = std::sqrt(var / trials);
    pass &= std::abs(mean - weighted) < 4.0 * se;
    detail += "resampling bias=" + fmt(std::abs(mean - weighted)) + " (<4se=" +
              fmt(4.0 * se) + ")";
  }
  report("A7 statistical contracts", pass, detail);
}

void criterion_a8(const Context& ctx) {
  bool pass = true;
  std::string detail;
  const Partition p2 = build_uniform_partition(domain1d(0, 1), {2});
  UlamMeta meta;
  meta.estimator = "mc";
  meta.n_samples = 1;
  meta.discard_fraction = VectorXd::Zero(2);
  MatrixXd swap(2, 2);
  swap << 0, 1, 1, 0;
  const auto tm_id =
      TransitionMatrix::from_dense(MatrixXd::Identity(2, 2), p2, meta);
  const auto tm_swap = TransitionMatrix::from_dense(swap, p2, meta);

  const std::vector<std::pair<std::string, const TransitionMatrix*>> mats = {
      {"identity", &tm_id},     {"swap", &tm_swap},
      {"ou_quad", &ctx.ou_quad}, {"ou_mc", &ctx.ou_mc},
      {"benes_mc", &ctx.benes_mc}, {"lorenz_mc", &ctx.lorenz_mc}};

  RngStream rng(23);
  double worst_violation = -1.0;
  for (const auto& [name, tm] : mats) {
    const Index n = tm->n();
    const int pairs = 1000;
    for (int t = 0; t < pairs; ++t) {
      RowVectorXd u(n), v(n);
      for (Index i = 0; i < n; ++i) {
        u[i] = rng.uniform();
        v[i] = rng.uniform();
      }
      u /= u.sum();
      v /= v.sum();
      const double before = 0.5 * (u - v).cwiseAbs().sum();
      const double after =
          0.5 * (tm->apply_left(u) - tm->apply_left(v)).cwiseAbs().sum();
      worst_violation = std::max(worst_violation, after - before);
    }
  }
  pass &= worst_violation <= 1e-12;
  detail += "max TV expansion over " + std::to_string(mats.size()) +
            " matrices x 1000 pairs = " + fmt(worst_violation) +
            " (<=1e-12); ";

  // likelihood operator contraction with clamped g
  const Partition p = build_uniform_partition(domain1d(0, 1), {40});
  double worst_ratio_violation = -1.0;
  for (int t = 0; t < 1000; ++t) {
    const double kappa = 0.1 + 0.9 * rng.uniform();
    LikelihoodVector g;
    g.g.resize(40);
    for (Index i = 0; i < 40; ++i)
      g.g[i] = kappa + (1.0 / kappa - kappa) * rng.uniform();
    WeightVector u, v;
    u.w.resize(40);
    v.w.resize(40);
    for (Index i = 0; i < 40; ++i) {
      u.w[i] = rng.uniform();
      v.w[i] = rng.uniform();
    }
    u.w /= u.w.sum() * p.box_measure();
    v.w /= v.w.sum() * p.box_measure();
    u.normalized = v.normalized = true;
    const double before = total_variation(u, v, p);
    const double after =
        total_variation(analyze(p, u, g), analyze(p, v, g), p);
    worst_ratio_violation = std::max(
        worst_ratio_violation, after - 2.0 / (kappa * kappa) * before - 1e-9);
  }
  pass &= worst_ratio_violation <= 0.0;
  detail += "likelihood contraction slack=" + fmt(worst_ratio_violation) +
            " (<=0)";
  report("A8 operator inequalities", pass, detail);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Context ctx;
    criterion_a1(ctx);
    criterion_a2(ctx);
    criterion_a3(ctx);
    criterion_a4();
    criterion_a5(ctx);
    criterion_a6(ctx);
    criterion_a7(ctx);
    criterion_a8(ctx);
  } catch (const std::exception& e) {
    std::printf("[FAIL] suite aborted: %s\n", e.what());
    return 1;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::printf("%d criterion(s) failed; %.1f s total\n", failures, secs);
  return failures == 0 ? 0 : 1;
}
