#include "tfilter/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Cholesky>

#include "tfilter/csv.hpp"

namespace fs = std::filesystem;

namespace tfilter {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

MatrixXd json_to_matrix(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError("empty matrix in config");
  MatrixXd m(static_cast<Index>(rows.size()),
             static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw ConfigError("ragged matrix in config");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  }
  return m;
}

VectorXd json_to_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

OuVariance ou_variance_from(const nlohmann::json& model_cfg) {
  const std::string kind = model_cfg.value("exact_step_variance", "paper");
  if (kind == "paper") return OuVariance::paper;
  if (kind == "textbook") return OuVariance::textbook;
  throw ConfigError("exact_step_variance must be 'paper' or 'textbook'");
}

Lorenz63Params lorenz_params_from(const nlohmann::json& m) {
  Lorenz63Params p;
  p.a = m.value("a", 10.0);
  p.b = m.value("b", 8.0 / 3.0);
  p.r = m.value("r", 28.0);
  if (m.contains("sigma")) {
    if (m["sigma"].is_number()) {
      p.sigma1 = p.sigma2 = p.sigma3 = m["sigma"].get<double>();
    } else {
      const auto s = m["sigma"].get<std::vector<double>>();
      if (s.size() != 3) throw ConfigError("lorenz63 sigma needs 3 entries");
      p.sigma1 = s[0];
      p.sigma2 = s[1];
      p.sigma3 = s[2];
    }
  }
  return p;
}

}  // namespace

SdeModel make_model(const nlohmann::json& model_cfg) {
  const std::string name = model_cfg.at("name").get<std::string>();
  if (name == "ou")
    return ou_model(model_cfg.value("lambda", 0.5),
                    ou_variance_from(model_cfg));
  if (name == "benes") return benes_model();
  if (name == "lorenz63") return lorenz63_model(lorenz_params_from(model_cfg));
  throw ConfigError("unknown model '" + name + "'");
}

std::function<MatrixXd(const VectorXd&)> make_drift_jacobian(
    const nlohmann::json& model_cfg) {
  const std::string name = model_cfg.at("name").get<std::string>();
  if (name == "ou") {
    const double lambda = model_cfg.value("lambda", 0.5);
    return [lambda](const VectorXd&) {
      return MatrixXd::Constant(1, 1, -lambda).eval();
    };
  }
  if (name == "benes") {
    return [](const VectorXd& x) {
      const double t = std::tanh(x[0]);
      return MatrixXd::Constant(1, 1, 1.0 - t * t).eval();
    };
  }
  if (name == "lorenz63")
    return lorenz63_drift_jacobian(lorenz_params_from(model_cfg));
  throw ConfigError("no drift Jacobian for model '" + name + "'");
}

WeightVector make_init_weights(const nlohmann::json& init,
                               const Partition& p) {
  const std::string type = init.at("type").get<std::string>();
  if (type == "uniform") {
    WeightVector w;
    w.w = VectorXd::Constant(p.n_boxes(), 1.0 / p.domain().volume());
    w.normalized = true;
    return w;
  }
  if (type == "point") {
    const VectorXd x = json_to_vector(init.at("value"));
    const auto box = p.locate(x);
    if (!box) throw ConfigError("init point lies outside the domain");
    WeightVector w;
    w.w = VectorXd::Zero(p.n_boxes());
    w.w[*box] = 1.0 / p.box_measure();
    w.normalized = true;
    return w;
  }
  if (type == "gauss") {
    const VectorXd mean = json_to_vector(init.at("mean"));
    const MatrixXd cov = json_to_matrix(init.at("cov"));
    if (mean.size() != p.dim())
      throw ConfigError("init mean dimension mismatch");
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw ConfigError("init covariance is not positive definite");
    const double log_det =
        2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double log_norm =
        -0.5 * (p.dim() * std::log(2.0 * M_PI) + log_det);
    auto rho = [mean, llt, log_norm](const VectorXd& x) {
      const VectorXd d = x - mean;
      return std::exp(log_norm - 0.5 * d.dot(llt.solve(d)));
    };
    ProjectionOptions opts;
    opts.nodes_per_dim = p.dim() >= 3 ? 6 : 16;
    return project_density(p, rho, opts);
  }
  if (type == "benes") {
    if (p.dim() != 1) throw ConfigError("benes init is one-dimensional");
    const BenesDaumState s{init.at("m").get<double>(),
                           init.at("P").get<double>()};
    auto rho = [s](const VectorXd& x) { return benes_daum_density(s, x[0]); };
    return project_density(p, rho);
  }
  throw ConfigError("unknown init type '" + type + "'");
}

InitialSampler make_init_sampler(const nlohmann::json& init, int dim) {
  const std::string type = init.at("type").get<std::string>();
  if (type == "point") {
    const VectorXd x = json_to_vector(init.at("value"));
    return [x](RngStream&) { return x; };
  }
  if (type == "gauss") {
    const VectorXd mean = json_to_vector(init.at("mean"));
    const MatrixXd cov = json_to_matrix(init.at("cov"));
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw ConfigError("init covariance is not positive definite");
    const MatrixXd L = llt.matrixL();
    return [mean, L, dim](RngStream& rng) {
      VectorXd xi(dim);
      for (int k = 0; k < dim; ++k) xi[k] = rng.normal();
      return (mean + L * xi).eval();
    };
  }
  if (type == "benes") {
    // cosh(x) exp(-(x-m)^2/(2P)) is the two-Gaussian mixture
    // w+- = exp(+-m)/(2 cosh m), components N(m +- P, P)
    const double m = init.at("m").get<double>();
    const double P = init.at("P").get<double>();
    const double w_plus = std::exp(m) / (2.0 * std::cosh(m));
    return [m, P, w_plus](RngStream& rng) {
      VectorXd x(1);
      const double mu = rng.uniform() < w_plus ? m + P : m - P;
      x[0] = mu + std::sqrt(P) * rng.normal();
      return x;
    };
  }
  throw ConfigError("unknown init type '" + type + "' for sampling");
}

nlohmann::json parse_init_string(const std::string& text) {
  nlohmann::json j;
  double a = 0, b = 0;
  if (text == "uniform") {
    j["type"] = "uniform";
    return j;
  }
  if (std::sscanf(text.c_str(), "gauss(%lf,%lf)", &a, &b) == 2) {
    j["type"] = "gauss";
    j["mean"] = {a};
    j["cov"] = {{b}};
    return j;
  }
  if (std::sscanf(text.c_str(), "benes(%lf,%lf)", &a, &b) == 2) {
    j["type"] = "benes";
    j["m"] = a;
    j["P"] = b;
    return j;
  }
  throw ConfigError("cannot parse init '" + text +
                    "' (expected gauss(m,C), benes(m,P) or uniform)");
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.seed = j.value("seed", 0ULL);
  cfg.output_dir = j.at("output_dir").get<std::string>();
  cfg.model = j.at("model");
  make_model(cfg.model);  // validates the model block

  const auto& dom = j.at("domain");
  cfg.domain.lower = json_to_vector(dom.at("lower"));
  cfg.domain.upper = json_to_vector(dom.at("upper"));
  cfg.domain.validate();
  cfg.counts = j.at("grid").get<std::vector<Index>>();
  if (cfg.counts.size() != static_cast<std::size_t>(cfg.domain.dim()))
    throw ConfigError("grid length does not match domain dimension");

  cfg.tau = j.at("tau").get<double>();
  if (!(cfg.tau > 0)) throw ConfigError("tau must be positive");
  cfg.steps = j.at("steps").get<int>();
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  cfg.x0 = j.at("x0");
  cfg.init = j.at("init");

  if (j.contains("ulam")) {
    const auto& u = j["ulam"];
    cfg.estimator = u.value("estimator", "mc");
    cfg.n_samples = u.value("n_samples", 100);
    cfg.substeps = u.value("substeps", 1);
    cfg.oob = u.value("oob", "discard");
    cfg.matrix_path = u.value("matrix", "");
  }
  if (cfg.estimator != "mc" && cfg.estimator != "quadrature")
    throw ConfigError("estimator must be 'mc' or 'quadrature'");
  if (cfg.oob != "discard" && cfg.oob != "absorb")
    throw ConfigError("oob must be 'discard' or 'absorb'");
  if (!cfg.matrix_path.empty() && !fs::exists(cfg.matrix_path))
    throw ConfigError("matrix file does not exist: " + cfg.matrix_path);

  const auto& obs = j.at("observation");
  cfg.obs_type = obs.at("type").get<std::string>();
  cfg.H = json_to_matrix(obs.at("H"));
  if (cfg.H.cols() != cfg.domain.dim())
    throw ConfigError("observation H column count must match the state dimension");
  if (cfg.obs_type == "discrete") {
    cfg.R = json_to_matrix(obs.at("R"));
  } else if (cfg.obs_type == "continuous") {
    cfg.gamma = obs.at("gamma").get<double>();
    if (!(cfg.gamma > 0)) throw ConfigError("gamma must be positive");
  } else {
    throw ConfigError("observation type must be 'discrete' or 'continuous'");
  }

  for (const auto& f : j.at("filters")) {
    FilterSpec spec;
    spec.method = f.at("method").get<std::string>();
    spec.rank = f.value("rank", 0);
    spec.particles = f.value("particles", 0);
    if (spec.method == "lrpfof" && spec.rank < 1)
      throw ConfigError("lrpfof filter needs a positive rank");
    if (spec.method == "pf" && spec.particles < 1)
      throw ConfigError("pf filter needs a positive particle count");
    if (spec.method != "pfof" && spec.method != "lrpfof" &&
        spec.method != "pf" && spec.method != "exkf")
      throw ConfigError("unknown filter method '" + spec.method + "'");
    cfg.filters.push_back(spec);
  }
  if (cfg.filters.empty()) throw ConfigError("no filters configured");

  cfg.pdf_steps = j.value("pdf_steps", std::vector<int>{});
  for (int s : cfg.pdf_steps)
    if (s < 0 || s > cfg.steps)
      throw ConfigError("pdf step " + std::to_string(s) + " out of range");
  cfg.dump_weights = j.value("dump_weights", false);
  return cfg;
}

namespace {

// Per-step oracle posterior density for the 1-D closed-form references.
struct OracleDensities {
  bool available = false;
  std::string kind;  // kalman | benes_daum
  std::vector<std::function<double(double)>> density;  // per step 0..J
  std::vector<double> mean;
};

OracleDensities make_oracle(const ExperimentConfig& cfg,
                            const std::vector<VectorXd>& observations) {
  OracleDensities o;
  const std::string model = cfg.model.at("name").get<std::string>();
  if (cfg.obs_type != "discrete") return o;
  if (cfg.H.rows() != 1 || cfg.H.cols() != 1) return o;

  std::vector<double> ys;
  ys.reserve(observations.size());
  for (const auto& y : observations) ys.push_back(y[0]);

  if (model == "ou" && cfg.init.at("type") == "gauss") {
    const double lambda = cfg.model.value("lambda", 0.5);
    const double sigma_k =
        ou_step_variance(lambda, cfg.tau, ou_variance_from(cfg.model));
    const double m0 = cfg.init.at("mean")[0].get<double>();
    const double C0 = cfg.init.at("cov")[0][0].get<double>();
    const auto trace = kalman_oracle_ou(lambda, cfg.tau, sigma_k,
                                        cfg.R(0, 0), ys, m0, C0, cfg.H(0, 0));
    o.available = true;
    o.kind = "kalman";
    for (const auto& s : trace) {
      const double m = s.post_mean, v = s.post_var;
      o.density.push_back([m, v](double x) { return normal_pdf(x, m, v); });
      o.mean.push_back(m);
    }
    return o;
  }
  if (model == "benes" && cfg.init.at("type") == "benes" &&
      cfg.H(0, 0) == 1.0) {
    const auto trace =
        benes_daum_oracle(ys, cfg.R(0, 0), cfg.tau, cfg.init.at("m"),
                          cfg.init.at("P"));
    o.available = true;
    o.kind = "benes_daum";
    for (const auto& s : trace) {
      o.density.push_back([s](double x) { return benes_daum_density(s, x); });
      o.mean.push_back(s.m);
    }
    return o;
  }
  return o;
}

struct MethodOutput {
  std::string label;
  std::vector<VectorXd> means;             // per step
  std::vector<double> tv_to_oracle;        // per step, NaN when undefined
  std::vector<WeightVector> grid_density;  // per step (grid methods + binned pf)
  double offline_ms = 0.0;
  double online_ms = 0.0;
  nlohmann::json extra;
};

std::string method_label(const FilterSpec& f) {
  if (f.method == "lrpfof")
    return "lrpfof_r" + std::to_string(f.rank);
  if (f.method == "pf") return "pf_m" + std::to_string(f.particles);
  return f.method;
}

TransitionSampler make_pf_kernel(const ExperimentConfig& cfg,
                                 const SdeModel& model) {
  const std::string name = cfg.model.at("name").get<std::string>();
  if (name == "benes") return benes_ar_kernel(cfg.tau);
  const double tau = cfg.tau;
  const int substeps = cfg.substeps;
  return [&model, tau, substeps](const VectorXd& x, RngStream& rng) {
    return flow_sample(model, x, tau, substeps, rng);
  };
}

double tv_grid_vs_scalar_density(const WeightVector& w, const Partition& p,
                                 const std::function<double(double)>& rho) {
  return total_variation_vs_density(
      w, p, [&rho](const VectorXd& x) { return rho(x[0]); }, 32);
}

}  // namespace

nlohmann::json run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const SdeModel model = make_model(cfg.model);
  const Partition p = build_uniform_partition(cfg.domain, cfg.counts);
  const RngStream master(cfg.seed);

  const MatrixXd H = cfg.H;
  auto h_fn = [H](const VectorXd& x) { return (H * x).eval(); };
  const int obs_dim = static_cast<int>(H.rows());

  // --- data generation ------------------------------------------------
  VectorXd x0;
  {
    RngStream r = master.split(1);
    x0 = make_init_sampler(cfg.x0, model.dim)(r);
  }
  std::vector<VectorXd> truth;
  std::vector<VectorXd> observations;  // discrete only
  ContinuousObservationPath path;      // continuous only

  if (cfg.obs_type == "discrete") {
    DiscreteObservationModel obs{h_fn, cfg.R, obs_dim};
    RngStream r = master.split(2);
    auto data = generate_truth_and_observations(model, obs, x0, cfg.steps,
                                                cfg.tau, cfg.substeps, r);
    truth = std::move(data.states);
    observations = std::move(data.observations);
  } else {
    RngStream r = master.split(2);
    truth.push_back(x0);
    VectorXd x = x0;
    for (int j = 0; j < cfg.steps; ++j) {
      x = flow_sample(model, x, cfg.tau, cfg.substeps, r);
      truth.push_back(x);
    }
    RngStream rz = master.split(3);
    path = generate_continuous_observation(h_fn, obs_dim, cfg.gamma, truth,
                                           cfg.tau, 0.0, rz);
  }

  {  // truth.csv and obs.csv
    std::vector<std::string> th{"t"};
    for (int d = 0; d < model.dim; ++d)
      th.push_back("x_" + std::to_string(d + 1));
    CsvWriter tw(cfg.output_dir + "/truth.csv", th);
    for (std::size_t j = 0; j < truth.size(); ++j) {
      std::vector<std::string> row{fmt_double(cfg.tau * static_cast<double>(j))};
      for (int d = 0; d < model.dim; ++d)
        row.push_back(fmt_double(truth[j][d]));
      tw.write_row(row);
    }
    std::vector<std::string> oh{"t"};
    for (int d = 0; d < obs_dim; ++d)
      oh.push_back((cfg.obs_type == "discrete" ? "y_" : "z_") +
                   std::to_string(d + 1));
    CsvWriter ow(cfg.output_dir + "/obs.csv", oh);
    if (cfg.obs_type == "discrete") {
      for (std::size_t j = 0; j < observations.size(); ++j) {
        std::vector<std::string> row{
            fmt_double(cfg.tau * static_cast<double>(j + 1))};
        for (int d = 0; d < obs_dim; ++d)
          row.push_back(fmt_double(observations[j][d]));
        ow.write_row(row);
      }
    } else {
      for (std::size_t j = 0; j < path.z.size(); ++j) {
        std::vector<std::string> row{fmt_double(path.times[static_cast<Index>(j)])};
        for (int d = 0; d < obs_dim; ++d)
          row.push_back(fmt_double(path.z[j][d]));
        ow.write_row(row);
      }
    }
  }

  // --- transition matrix (offline, shared) ------------------------------
  const auto t_matrix = Clock::now();
  TransitionMatrix tm = [&]() {
    if (!cfg.matrix_path.empty()) {
      TransitionMatrix loaded = load_matrix(cfg.matrix_path);
      check_partition_match(loaded, p);
      return loaded;
    }
    if (cfg.estimator == "quadrature") {
      if (cfg.model.at("name") != "ou")
        throw ConfigError(
            "quadrature estimator is implemented for the linear 'ou' model");
      const double lambda = cfg.model.value("lambda", 0.5);
      const double a = std::exp(-lambda * cfg.tau);
      const double var =
          ou_step_variance(lambda, cfg.tau, ou_variance_from(cfg.model));
      GaussianKernelOptions gopt;
      gopt.tau = cfg.tau;
      return gaussian_kernel_matrix(p, MatrixXd::Constant(1, 1, a),
                                    VectorXd::Zero(1),
                                    MatrixXd::Constant(1, 1, var), gopt);
    }
    UlamOptions uopt;
    uopt.n_samples = cfg.n_samples;
    uopt.substeps = cfg.substeps;
    uopt.seed = master.split(4).seed();
    uopt.oob = cfg.oob == "discard" ? OutOfDomainPolicy::discard_renormalize
                                    : OutOfDomainPolicy::absorb_boundary;
    return estimate_transition_matrix(p, model, cfg.tau, uopt);
  }();
  const double matrix_ms = ms_since(t_matrix);

  const WeightVector w0 = make_init_weights(cfg.init, p);
  const OracleDensities oracle = make_oracle(cfg, observations);

  // --- filters -----------------------------------------------------------
  std::vector<MethodOutput> outputs;
  for (const FilterSpec& spec : cfg.filters) {
    MethodOutput out;
    out.label = method_label(spec);
    out.offline_ms = matrix_ms;

    if (spec.method == "pfof") {
      const auto t0 = Clock::now();
      FilterTrace trace;
      if (cfg.obs_type == "discrete") {
        DiscreteObservationModel obs{h_fn, cfg.R, obs_dim};
        trace = pfof_run(tm, w0, observations, obs, p);
      } else {
        trace = zakai_run(tm, w0, path, h_fn, p);
        out.extra["log_normalizer"] = trace.log_normalizer;
      }
      out.online_ms = ms_since(t0);
      for (const auto& s : trace.steps) {
        out.means.push_back(s.mean);
        out.grid_density.push_back(s.posterior);
      }
    } else if (spec.method == "lrpfof") {
      if (cfg.obs_type != "discrete")
        throw ConfigError("lrpfof runs on discrete observations");
      const auto te = Clock::now();
      const SpectralModel sm = eigendecompose(tm);
      out.offline_ms = matrix_ms + ms_since(te);
      out.extra["xi_condition_number"] = sm.condition_number;
      DiscreteObservationModel obs{h_fn, cfg.R, obs_dim};
      const auto t0 = Clock::now();
      const FilterTrace trace =
          lr_pfof_run(sm, w0, observations, obs, p, spec.rank);
      out.online_ms = ms_since(t0);
      double clamped = 0.0;
      for (const auto& s : trace.steps) {
        out.means.push_back(s.mean);
        out.grid_density.push_back(s.posterior);
        clamped = std::max(clamped, s.clamped_mass);
      }
      out.extra["max_clamped_mass"] = clamped;
    } else if (spec.method == "pf") {
      if (cfg.obs_type != "discrete")
        throw ConfigError("the SIR filter runs on discrete observations");
      DiscreteObservationModel obs{h_fn, cfg.R, obs_dim};
      const TransitionSampler kernel = make_pf_kernel(cfg, model);
      const InitialSampler mu0 = make_init_sampler(cfg.init, model.dim);
      RngStream rng = master.split(5);
      const auto t0 = Clock::now();
      const auto ensembles =
          sir_pf_run(kernel, obs, observations, spec.particles, mu0, rng);
      out.online_ms = ms_since(t0);
      out.offline_ms = 0.0;  // no offline phase
      double lost = 0.0;
      for (const auto& e : ensembles) {
        VectorXd mean = VectorXd::Zero(model.dim);
        for (std::size_t i = 0; i < e.positions.size(); ++i)
          mean += e.weights[static_cast<Index>(i)] * e.positions[i];
        out.means.push_back(mean);
        double lost_step = 0.0;
        out.grid_density.push_back(bin_particles(e, p, &lost_step));
        lost = std::max(lost, lost_step);
      }
      out.extra["max_out_of_domain_weight"] = lost;
    } else {  // exkf
      const auto jac = make_drift_jacobian(cfg.model);
      auto h_jac = [H](const VectorXd&) { return H; };
      if (cfg.obs_type == "discrete") {
        const std::string name = cfg.model.at("name").get<std::string>();
        std::function<VectorXd(const VectorXd&)> flow;
        MatrixXd Sigma;
        if (name == "ou") {
          const double lambda = cfg.model.value("lambda", 0.5);
          const double a = std::exp(-lambda * cfg.tau);
          flow = [a](const VectorXd& x) { return (a * x).eval(); };
          Sigma = MatrixXd::Constant(
              1, 1,
              ou_step_variance(lambda, cfg.tau, ou_variance_from(cfg.model)));
        } else {
          const double dt = cfg.tau / cfg.substeps;
          const int sub = cfg.substeps;
          flow = [&model, dt, sub](const VectorXd& x0) {
            VectorXd x = x0;
            for (int s = 0; s < sub; ++s) x += model.drift(x) * dt;
            return x;
          };
          const MatrixXd s0 = model.diffusion(VectorXd::Zero(model.dim));
          Sigma = s0 * s0.transpose() * cfg.tau;
        }
        const auto flow_jac = numeric_jacobian(flow, model.dim);
        GaussianBelief init;
        if (cfg.init.at("type") != "gauss")
          throw ConfigError("exkf needs a Gaussian init");
        init.mean = json_to_vector(cfg.init.at("mean"));
        init.cov = json_to_matrix(cfg.init.at("cov"));
        const auto t0 = Clock::now();
        const auto trace = exkf_discrete(flow, flow_jac, Sigma, h_fn, h_jac,
                                         cfg.R, observations, init);
        out.online_ms = ms_since(t0);
        out.offline_ms = 0.0;
        for (const auto& s : trace) out.means.push_back(s.posterior.mean);
        if (oracle.available && model.dim == 1) {
          for (const auto& s : trace) {
            const double m = s.posterior.mean[0];
            const double v = s.posterior.cov(0, 0);
            out.grid_density.push_back(project_density(
                p, [m, v](const VectorXd& x) { return normal_pdf(x[0], m, v); },
                {8, false, 0.0}));
          }
        }
      } else {
        if (cfg.init.at("type") != "gauss")
          throw ConfigError("exkf needs a Gaussian init");
        GaussianBelief init{json_to_vector(cfg.init.at("mean")),
                            json_to_matrix(cfg.init.at("cov"))};
        const MatrixXd s0 = model.diffusion(VectorXd::Zero(model.dim));
        const auto t0 = Clock::now();
        const auto res = exkf_continuous(model.drift, jac,
                                         (s0 * s0.transpose()).eval(), h_fn,
                                         h_jac, path, init);
        out.online_ms = ms_since(t0);
        out.offline_ms = 0.0;
        for (const auto& b : res.trace) out.means.push_back(b.mean);
        out.extra["covariance_repairs"] = res.covariance_repairs;
        out.extra["overflow_clamps"] = res.overflow_clamps;
      }
    }

    // per-step TV against the oracle
    out.tv_to_oracle.assign(out.means.size(),
                            std::numeric_limits<double>::quiet_NaN());
    if (oracle.available && !out.grid_density.empty()) {
      for (std::size_t j = 0; j < out.grid_density.size(); ++j)
        out.tv_to_oracle[j] =
            tv_grid_vs_scalar_density(out.grid_density[j], p,
                                      oracle.density[j]);
    }
    outputs.push_back(std::move(out));
  }

  // --- emission ------------------------------------------------------------
  {
    CsvWriter mw(cfg.output_dir + "/metrics.csv",
                 {"step", "method", "t", "tv_to_oracle", "mse_mean"});
    for (int j = 0; j <= cfg.steps; ++j) {
      for (const auto& out : outputs) {
        const VectorXd err =
            truth[static_cast<std::size_t>(j)] -
            out.means[static_cast<std::size_t>(j)];
        mw.write_row({std::to_string(j), out.label,
                      fmt_double(cfg.tau * j),
                      fmt_double(out.tv_to_oracle[static_cast<std::size_t>(j)]),
                      fmt_double(err.squaredNorm())});
      }
    }
  }
  {
    CsvWriter tw(cfg.output_dir + "/timings.csv",
                 {"method", "phase", "wall_ms"});
    for (const auto& out : outputs) {
      tw.write_row({out.label, "offline", fmt_double(out.offline_ms)});
      tw.write_row({out.label, "online", fmt_double(out.online_ms)});
      tw.write_row(
          {out.label, "total", fmt_double(out.offline_ms + out.online_ms)});
    }
  }
  for (const auto& out : outputs) {  // per-method trace files
    std::vector<std::string> th{"step", "t"};
    for (int d = 0; d < model.dim; ++d)
      th.push_back("mean_" + std::to_string(d + 1));
    th.push_back("tv_to_oracle");
    CsvWriter tw(cfg.output_dir + "/trace_" + out.label + ".csv", th);
    for (std::size_t j = 0; j < out.means.size(); ++j) {
      std::vector<std::string> row{std::to_string(j),
                                   fmt_double(cfg.tau * static_cast<double>(j))};
      for (int d = 0; d < model.dim; ++d)
        row.push_back(fmt_double(out.means[j][d]));
      row.push_back(fmt_double(out.tv_to_oracle[j]));
      tw.write_row(row);
    }
  }
  for (int js : cfg.pdf_steps) {  // density snapshots
    std::vector<std::string> header;
    for (int d = 0; d < model.dim; ++d)
      header.push_back("x_" + std::to_string(d + 1));
    std::vector<const MethodOutput*> with_grid;
    for (const auto& out : outputs)
      if (!out.grid_density.empty()) {
        header.push_back("density_" + out.label);
        with_grid.push_back(&out);
      }
    if (oracle.available) header.push_back("density_oracle");
    CsvWriter pw(cfg.output_dir + "/pdf_t" + std::to_string(js) + ".csv",
                 header);
    for (Index i = 0; i < p.n_boxes(); ++i) {
      const VectorXd c = p.center(i);
      std::vector<std::string> row;
      for (int d = 0; d < model.dim; ++d) row.push_back(fmt_double(c[d]));
      for (const auto* out : with_grid)
        row.push_back(fmt_double(
            out->grid_density[static_cast<std::size_t>(js)].w[i]));
      if (oracle.available)
        row.push_back(fmt_double(
            oracle.density[static_cast<std::size_t>(js)](c[0])));
      pw.write_row(row);
    }
  }
  if (model.dim >= 2) {  // final-step marginals for grid methods
    for (int d = 0; d < model.dim; ++d) {
      std::vector<std::string> header{"x_" + std::to_string(d + 1)};
      std::vector<Marginal1D> cols;
      for (const auto& out : outputs)
        if (!out.grid_density.empty()) {
          header.push_back("density_" + out.label);
          cols.push_back(marginal_1d(out.grid_density.back(), p, d));
        }
      if (cols.empty()) break;
      CsvWriter mw(
          cfg.output_dir + "/marginal_" + std::to_string(d + 1) + ".csv",
          header);
      for (Index i = 0; i < cols[0].centers.size(); ++i) {
        std::vector<std::string> row{fmt_double(cols[0].centers[i])};
        for (const auto& m : cols) row.push_back(fmt_double(m.density[i]));
        mw.write_row(row);
      }
    }
    for (int da = 0; da < model.dim; ++da)
      for (int db = da + 1; db < model.dim; ++db) {
        std::vector<std::string> header{"x_" + std::to_string(da + 1),
                                        "x_" + std::to_string(db + 1)};
        std::vector<Marginal2D> cols;
        for (const auto& out : outputs)
          if (!out.grid_density.empty()) {
            header.push_back("density_" + out.label);
            cols.push_back(marginal_2d(out.grid_density.back(), p, da, db));
          }
        if (cols.empty()) break;
        CsvWriter mw(cfg.output_dir + "/marginal_" + std::to_string(da + 1) +
                         std::to_string(db + 1) + ".csv",
                     header);
        for (Index ia = 0; ia < cols[0].centers_a.size(); ++ia)
          for (Index ib = 0; ib < cols[0].centers_b.size(); ++ib) {
            std::vector<std::string> row{fmt_double(cols[0].centers_a[ia]),
                                         fmt_double(cols[0].centers_b[ib])};
            for (const auto& m : cols)
              row.push_back(fmt_double(m.density(ia, ib)));
            mw.write_row(row);
          }
      }
  }
  if (cfg.dump_weights) {
    constexpr std::size_t kMaxCells = 20'000'000;  // size guard
    for (const auto& out : outputs) {
      if (out.grid_density.empty()) continue;
      if (out.grid_density.size() * static_cast<std::size_t>(p.n_boxes()) >
          kMaxCells)
        continue;
      nlohmann::json jw;
      for (const auto& w : out.grid_density)
        jw.push_back(std::vector<double>(w.w.begin(), w.w.end()));
      std::ofstream of(cfg.output_dir + "/weights_" + out.label + ".json");
      of << jw.dump();
    }
  }

  nlohmann::json summary;
  summary["seed"] = cfg.seed;
  summary["n_boxes"] = p.n_boxes();
  summary["estimator"] = tm.meta().estimator;
  summary["discard_fraction_max"] = tm.meta().discard_fraction.maxCoeff();
  summary["discard_fraction_mean"] = tm.meta().discard_fraction.mean();
  for (const auto& out : outputs) {
    nlohmann::json fj = out.extra;
    fj["offline_ms"] = out.offline_ms;
    fj["online_ms"] = out.online_ms;
    double final_tv = out.tv_to_oracle.back();
    if (std::isfinite(final_tv)) fj["final_tv_to_oracle"] = final_tv;
    fj["final_mse"] =
        (truth.back() - out.means.back()).squaredNorm();
    summary["filters"][out.label] = fj;
  }
  summary["config"] = cfg.raw;
  std::ofstream sf(cfg.output_dir + "/summary.json");
  sf << summary.dump(2) << "\n";
  return summary;
}

// --- rate studies ----------------------------------------------------------

namespace {

// two-sided 97.5% Student-t quantiles for small df; 1.96 beyond the table
double t_quantile_975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571,
                                 2.447,  2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131,
                                 2.120,  2.110, 2.101, 2.093, 2.086,
                                 2.080,  2.074, 2.069, 2.064, 2.060,
                                 2.056,  2.052, 2.048, 2.045, 2.042};
  if (df < 1) return std::numeric_limits<double>::infinity();
  if (df <= 30) return table[df - 1];
  return 1.96;
}

}  // namespace

SlopeFit fit_loglog_slope(const VectorXd& x, const VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ConfigError("fit_loglog_slope: need at least two points");
  const VectorXd lx = x.array().log();
  const VectorXd ly = y.array().log();
  const double mx = lx.mean(), my = ly.mean();
  const VectorXd dx = lx.array() - mx;
  const double sxx = dx.squaredNorm();
  if (!(sxx > 0)) throw ConfigError("fit_loglog_slope: degenerate abscissae");
  SlopeFit f;
  f.slope = dx.dot(ly.array().matrix() - VectorXd::Constant(ly.size(), my)) / sxx;
  f.intercept = my - f.slope * mx;
  const Index n = x.size();
  if (n > 2) {
    const VectorXd resid = ly - (f.slope * lx.array() + f.intercept).matrix();
    const double s2 = resid.squaredNorm() / static_cast<double>(n - 2);
    f.half_width = t_quantile_975(static_cast<int>(n) - 2) *
                   std::sqrt(s2 / sxx);
  } else {
    f.half_width = std::numeric_limits<double>::infinity();
  }
  return f;
}

RateStudyConfig parse_rate_config(const nlohmann::json& j) {
  RateStudyConfig cfg;
  cfg.seed = j.value("seed", 0ULL);
  cfg.output_dir = j.value("output_dir", "");
  if (j.contains("ou")) {
    const auto& o = j["ou"];
    cfg.lambda = o.value("lambda", cfg.lambda);
    cfg.tau = o.value("tau", cfg.tau);
    cfg.m0 = o.value("m0", cfg.m0);
    cfg.C0 = o.value("C0", cfg.C0);
    cfg.sigma = o.value("sigma", cfg.sigma);
  }
  if (j.contains("domain")) {
    cfg.domain.lower = json_to_vector(j["domain"].at("lower"));
    cfg.domain.upper = json_to_vector(j["domain"].at("upper"));
    cfg.domain.validate();
  }
  cfg.steps = j.value("steps", cfg.steps);
  if (j.contains("N_values"))
    cfg.N_values = j["N_values"].get<std::vector<Index>>();
  if (j.contains("m_values"))
    cfg.m_values = j["m_values"].get<std::vector<int>>();
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.comparison_grid = j.value("comparison_grid", cfg.comparison_grid);
  return cfg;
}

namespace {

struct OuStudyData {
  std::vector<double> ys;
  std::vector<ScalarKalmanStep> kalman;
};

OuStudyData make_ou_study_data(const RateStudyConfig& cfg) {
  const SdeModel model = ou_model(cfg.lambda);
  const double R = cfg.sigma * cfg.sigma;
  DiscreteObservationModel obs{
      [](const VectorXd& x) { return x; },
      MatrixXd::Constant(1, 1, R), 1};
  RngStream rng = RngStream(cfg.seed).split(1);
  VectorXd x0(1);
  x0[0] = cfg.m0 + std::sqrt(cfg.C0) * rng.normal();
  const auto data = generate_truth_and_observations(model, obs, x0, cfg.steps,
                                                    cfg.tau, 1, rng);
  OuStudyData out;
  for (const auto& y : data.observations) out.ys.push_back(y[0]);
  out.kalman = kalman_oracle_ou(cfg.lambda, cfg.tau,
                                ou_step_variance(cfg.lambda, cfg.tau), R,
                                out.ys, cfg.m0, cfg.C0);
  return out;
}

}  // namespace

RateStudyResult rate_study_pfof(const RateStudyConfig& cfg) {
  const OuStudyData data = make_ou_study_data(cfg);
  const double m_final = data.kalman.back().post_mean;
  const double v_final = data.kalman.back().post_var;
  auto oracle_density = [m_final, v_final](const VectorXd& x) {
    return normal_pdf(x[0], m_final, v_final);
  };

  std::vector<VectorXd> observations;
  for (double y : data.ys) observations.push_back(VectorXd::Constant(1, y));

  const double a = std::exp(-cfg.lambda * cfg.tau);
  const double var = ou_step_variance(cfg.lambda, cfg.tau);
  const double R = cfg.sigma * cfg.sigma;

  RateStudyResult res;
  res.abscissae.resize(static_cast<Index>(cfg.N_values.size()));
  res.tv_mean.resize(res.abscissae.size());
  res.tv_std.resize(res.abscissae.size());
  for (std::size_t k = 0; k < cfg.N_values.size(); ++k) {
    const Partition p =
        build_uniform_partition(cfg.domain, {cfg.N_values[k]});
    GaussianKernelOptions gopt;
    gopt.tau = cfg.tau;
    const TransitionMatrix tm = gaussian_kernel_matrix(
        p, MatrixXd::Constant(1, 1, a), VectorXd::Zero(1),
        MatrixXd::Constant(1, 1, var), gopt);
    const double m0 = cfg.m0, C0 = cfg.C0;
    const WeightVector w0 = project_density(
        p, [m0, C0](const VectorXd& x) { return normal_pdf(x[0], m0, C0); });
    DiscreteObservationModel obs{[](const VectorXd& x) { return x; },
                                 MatrixXd::Constant(1, 1, R), 1};
    const FilterTrace trace = pfof_run(tm, w0, observations, obs, p);
    const double tv = total_variation_vs_density(trace.steps.back().posterior,
                                                 p, oracle_density);
    res.abscissae[static_cast<Index>(k)] =
        static_cast<double>(cfg.N_values[k]);
    // quadrature estimator: replicates are identical, variance is zero
    res.tv_mean[static_cast<Index>(k)] = tv;
    res.tv_std[static_cast<Index>(k)] = 0.0;
  }
  const SlopeFit f = fit_loglog_slope(res.abscissae, res.tv_mean);
  res.slope = f.slope;
  res.slope_half_width = f.half_width;
  return res;
}

RateStudyResult rate_study_pf(const RateStudyConfig& cfg) {
  const OuStudyData data = make_ou_study_data(cfg);
  const double m_final = data.kalman.back().post_mean;
  const double v_final = data.kalman.back().post_var;

  const Partition comp =
      build_uniform_partition(cfg.domain, {cfg.comparison_grid});
  const WeightVector oracle_binned = project_density(
      comp, [m_final, v_final](const VectorXd& x) {
        return normal_pdf(x[0], m_final, v_final);
      });

  std::vector<VectorXd> observations;
  for (double y : data.ys) observations.push_back(VectorXd::Constant(1, y));

  const SdeModel model = ou_model(cfg.lambda);
  const double R = cfg.sigma * cfg.sigma;
  DiscreteObservationModel obs{[](const VectorXd& x) { return x; },
                               MatrixXd::Constant(1, 1, R), 1};
  const double tau = cfg.tau;
  TransitionSampler kernel = [&model, tau](const VectorXd& x, RngStream& r) {
    return flow_sample(model, x, tau, 1, r);
  };
  const double m0 = cfg.m0, C0 = cfg.C0;
  InitialSampler mu0 = [m0, C0](RngStream& r) {
    return VectorXd::Constant(1, m0 + std::sqrt(C0) * r.normal()).eval();
  };

  RateStudyResult res;
  res.abscissae.resize(static_cast<Index>(cfg.m_values.size()));
  res.tv_mean.resize(res.abscissae.size());
  res.tv_std.resize(res.abscissae.size());
  for (std::size_t k = 0; k < cfg.m_values.size(); ++k) {
    VectorXd tvs(cfg.seeds);
    for (int s = 0; s < cfg.seeds; ++s) {
      RngStream rng =
          RngStream(cfg.seed).split(100 + k).split(static_cast<std::uint64_t>(s));
      const auto ensembles =
          sir_pf_run(kernel, obs, observations, cfg.m_values[k], mu0, rng);
      const WeightVector binned = bin_particles(ensembles.back(), comp);
      tvs[s] = total_variation(binned, oracle_binned, comp);
    }
    res.abscissae[static_cast<Index>(k)] =
        static_cast<double>(cfg.m_values[k]);
    res.tv_mean[static_cast<Index>(k)] = tvs.mean();
    res.tv_std[static_cast<Index>(k)] =
        cfg.seeds > 1
            ? std::sqrt((tvs.array() - tvs.mean()).square().sum() /
                        (cfg.seeds - 1))
            : 0.0;
  }
  const SlopeFit f = fit_loglog_slope(res.abscissae, res.tv_mean);
  res.slope = f.slope;
  res.slope_half_width = f.half_width;
  return res;
}

void write_rate_csv(const RateStudyResult& r, const std::string& path) {
  CsvWriter w(path, {"abscissa", "tv_mean", "tv_std", "slope",
                     "slope_half_width"});
  for (Index i = 0; i < r.abscissae.size(); ++i)
    w.write_row({fmt_double(r.abscissae[i]), fmt_double(r.tv_mean[i]),
                 fmt_double(r.tv_std[i]), fmt_double(r.slope),
                 fmt_double(r.slope_half_width)});
}

// --- marginals ----------------------------------------------------------

Marginal1D marginal_1d(const WeightVector& w, const Partition& p, int dim) {
  if (dim < 0 || dim >= p.dim())
    throw ConfigError("marginal_1d: dimension out of range");
  validate_weights(p, w);
  const Index cells = p.counts()[static_cast<std::size_t>(dim)];
  Marginal1D m;
  m.centers.resize(cells);
  m.density = VectorXd::Zero(cells);
  const double width = p.width(dim);
  for (Index c = 0; c < cells; ++c)
    m.centers[c] =
        p.domain().lower[dim] + (static_cast<double>(c) + 0.5) * width;
  for (Index i = 0; i < p.n_boxes(); ++i) {
    const auto mi = p.multi_index(i);
    m.density[mi[static_cast<std::size_t>(dim)]] +=
        w.w[i] * p.box_measure();
  }
  m.density /= width;  // probability per cell -> density
  return m;
}

Marginal2D marginal_2d(const WeightVector& w, const Partition& p, int dim_a,
                       int dim_b) {
  if (dim_a < 0 || dim_b < 0 || dim_a >= p.dim() || dim_b >= p.dim() ||
      dim_a == dim_b)
    throw ConfigError("marginal_2d: invalid dimension pair");
  validate_weights(p, w);
  const Index ca = p.counts()[static_cast<std::size_t>(dim_a)];
  const Index cb = p.counts()[static_cast<std::size_t>(dim_b)];
  Marginal2D m;
  m.centers_a.resize(ca);
  m.centers_b.resize(cb);
  for (Index c = 0; c < ca; ++c)
    m.centers_a[c] = p.domain().lower[dim_a] +
                     (static_cast<double>(c) + 0.5) * p.width(dim_a);
  for (Index c = 0; c < cb; ++c)
    m.centers_b[c] = p.domain().lower[dim_b] +
                     (static_cast<double>(c) + 0.5) * p.width(dim_b);
  m.density = MatrixXd::Zero(ca, cb);
  for (Index i = 0; i < p.n_boxes(); ++i) {
    const auto mi = p.multi_index(i);
    m.density(mi[static_cast<std::size_t>(dim_a)],
              mi[static_cast<std::size_t>(dim_b)]) +=
        w.w[i] * p.box_measure();
  }
  m.density /= p.width(dim_a) * p.width(dim_b);
  return m;
}

double excess_kurtosis(const Marginal1D& m) {
  const double width =
      m.centers.size() > 1 ? m.centers[1] - m.centers[0] : 1.0;
  const VectorXd prob = m.density * width;
  const double mean = prob.dot(m.centers);
  double m2 = 0.0, m4 = 0.0;
  for (Index i = 0; i < m.centers.size(); ++i) {
    const double d = m.centers[i] - mean;
    m2 += prob[i] * d * d;
    m4 += prob[i] * d * d * d * d;
  }
  if (!(m2 > 0)) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

}  // namespace tfilter
