// tfilter: transfer-operator filtering benchmark CLI.
//
// Subcommands:
//   ulam    estimate and store a transition matrix
//   filter  run one filter against an observation file
//   run     execute a config-driven experiment
//   rates   convergence-rate studies (grid filter vs particle filter)

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tfilter/csv.hpp"
#include "tfilter/harness.hpp"

namespace fs = std::filesystem;
using namespace tfilter;

namespace {

Domain parse_domain(const std::string& text) {
  Domain d;
  std::vector<double> lo, hi;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    double a = 0, b = 0;
    if (std::sscanf(part.c_str(), "%lf:%lf", &a, &b) != 2)
      throw ConfigError("cannot parse domain segment '" + part +
                        "' (expected lo:hi)");
    lo.push_back(a);
    hi.push_back(b);
  }
  d.lower = Eigen::Map<const VectorXd>(lo.data(), static_cast<Index>(lo.size()));
  d.upper = Eigen::Map<const VectorXd>(hi.data(), static_cast<Index>(hi.size()));
  d.validate();
  return d;
}

std::vector<Index> parse_grid(const std::string& text) {
  std::vector<Index> counts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) counts.push_back(std::stol(part));
  return counts;
}

nlohmann::json model_json(const std::string& name,
                          const std::vector<std::string>& params) {
  nlohmann::json m;
  m["name"] = name;
  for (const auto& kv : params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("model parameter '" + kv + "' is not key=value");
    m[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
  }
  return m;
}

MatrixXd parse_row_matrix(const std::string& text) {
  // rows separated by ';', entries by ','
  std::vector<std::vector<double>> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    std::vector<double> r;
    std::stringstream rs(row);
    std::string cell;
    while (std::getline(rs, cell, ',')) r.push_back(std::stod(cell));
    rows.push_back(r);
  }
  MatrixXd m(static_cast<Index>(rows.size()),
             static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

int run_ulam(const std::string& model_name,
             const std::vector<std::string>& params, const std::string& domain,
             const std::string& grid, double tau, int samples, int substeps,
             std::uint64_t seed, const std::string& estimator,
             const std::string& oob, const std::string& out_path,
             const std::string& spectral_path) {
  const nlohmann::json mj = model_json(model_name, params);
  const SdeModel model = make_model(mj);
  const Partition p = build_uniform_partition(parse_domain(domain),
                                              parse_grid(grid));
  TransitionMatrix tm = [&] {
    if (estimator == "quadrature") {
      if (model_name != "ou")
        throw ConfigError("quadrature estimator supports the 'ou' model");
      const double lambda = mj.value("lambda", 0.5);
      GaussianKernelOptions gopt;
      gopt.tau = tau;
      return gaussian_kernel_matrix(
          p, MatrixXd::Constant(1, 1, std::exp(-lambda * tau)),
          VectorXd::Zero(1),
          MatrixXd::Constant(1, 1, ou_step_variance(lambda, tau)), gopt);
    }
    UlamOptions opts;
    opts.n_samples = samples;
    opts.substeps = substeps;
    opts.seed = seed;
    opts.oob = oob == "absorb" ? OutOfDomainPolicy::absorb_boundary
                               : OutOfDomainPolicy::discard_renormalize;
    return estimate_transition_matrix(p, model, tau, opts);
  }();
  save_matrix(tm, out_path);
  std::cout << "wrote " << out_path << " (N=" << tm.n()
            << ", estimator=" << tm.meta().estimator << ", max discard "
            << tm.meta().discard_fraction.maxCoeff() << ")\n";
  if (!spectral_path.empty()) {
    const SpectralModel sm = eigendecompose(tm);
    save_spectral(sm, p, spectral_path);
    std::cout << "wrote " << spectral_path
              << " (condition " << sm.condition_number << ")\n";
  }
  return 0;
}

int run_filter(const std::string& method, const std::string& matrix_path,
               const std::string& obs_path, const std::string& init_text,
               const std::string& H_text, const std::string& R_text,
               double gamma, Index rank, int particles,
               const std::string& model_name,
               const std::vector<std::string>& params, std::uint64_t seed,
               const std::string& out_dir) {
  const TransitionMatrix tm = load_matrix(matrix_path);
  const Partition& p = tm.partition();
  fs::create_directories(out_dir);

  const CsvTable obs_csv = read_csv(obs_path);
  const bool continuous = obs_csv.column("z_1") >= 0;
  std::vector<VectorXd> observations;
  ContinuousObservationPath path;
  int obs_dim = 0;
  if (!continuous) {
    while (obs_csv.column("y_" + std::to_string(obs_dim + 1)) >= 0) ++obs_dim;
    if (obs_dim == 0) throw ConfigError(obs_path + ": no y_* columns");
    for (const auto& row : obs_csv.rows) {
      VectorXd y(obs_dim);
      for (int d = 0; d < obs_dim; ++d)
        y[d] = row[static_cast<std::size_t>(
            obs_csv.column("y_" + std::to_string(d + 1)))];
      observations.push_back(y);
    }
  } else {
    while (obs_csv.column("z_" + std::to_string(obs_dim + 1)) >= 0) ++obs_dim;
    const int tcol = obs_csv.column("t");
    if (tcol < 0) throw ConfigError(obs_path + ": missing t column");
    if (!(gamma > 0))
      throw ConfigError("continuous observations need --gamma > 0");
    path.times.resize(static_cast<Index>(obs_csv.rows.size()));
    for (std::size_t r = 0; r < obs_csv.rows.size(); ++r) {
      path.times[static_cast<Index>(r)] = obs_csv.rows[r][static_cast<std::size_t>(tcol)];
      VectorXd z(obs_dim);
      for (int d = 0; d < obs_dim; ++d)
        z[d] = obs_csv.rows[r][static_cast<std::size_t>(
            obs_csv.column("z_" + std::to_string(d + 1)))];
      path.z.push_back(z);
    }
    path.gamma = gamma;
    path.R_c = gamma * gamma * MatrixXd::Identity(obs_dim, obs_dim);
  }

  const MatrixXd H = parse_row_matrix(H_text);
  auto h_fn = [H](const VectorXd& x) { return (H * x).eval(); };
  const WeightVector w0 =
      make_init_weights(parse_init_string(init_text), p);

  std::vector<VectorXd> means;
  if (method == "pfof" && continuous) {
    const FilterTrace trace = zakai_run(tm, w0, path, h_fn, p);
    for (const auto& s : trace.steps) means.push_back(s.mean);
  } else if (method == "pfof" || method == "lrpfof") {
    const MatrixXd R = parse_row_matrix(R_text);
    DiscreteObservationModel obs{h_fn, R, static_cast<int>(H.rows())};
    FilterTrace trace;
    if (method == "pfof") {
      trace = pfof_run(tm, w0, observations, obs, p);
    } else {
      if (rank < 1) throw ConfigError("lrpfof needs --rank");
      const SpectralModel sm = eigendecompose(tm);
      trace = lr_pfof_run(sm, w0, observations, obs, p, rank);
    }
    for (const auto& s : trace.steps) means.push_back(s.mean);
  } else if (method == "pf") {
    if (particles < 1) throw ConfigError("pf needs --particles");
    if (model_name.empty()) throw ConfigError("pf needs --model");
    const nlohmann::json mj = model_json(model_name, params);
    const SdeModel model = make_model(mj);
    const MatrixXd R = parse_row_matrix(R_text);
    DiscreteObservationModel obs{h_fn, R, static_cast<int>(H.rows())};
    const double tau = tm.meta().tau;
    TransitionSampler kernel =
        model_name == "benes"
            ? benes_ar_kernel(tau)
            : TransitionSampler([&model, tau](const VectorXd& x,
                                              RngStream& r) {
                return flow_sample(model, x, tau, 20, r);
              });
    RngStream rng(seed);
    const auto ensembles =
        sir_pf_run(kernel, obs, observations, particles,
                   make_init_sampler(parse_init_string(init_text), model.dim),
                   rng);
    for (const auto& e : ensembles) {
      VectorXd mean = VectorXd::Zero(model.dim);
      for (std::size_t i = 0; i < e.positions.size(); ++i)
        mean += e.weights[static_cast<Index>(i)] * e.positions[i];
      means.push_back(mean);
    }
  } else if (method == "exkf") {
    if (model_name.empty()) throw ConfigError("exkf needs --model");
    const nlohmann::json mj = model_json(model_name, params);
    const SdeModel model = make_model(mj);
    const auto jac = make_drift_jacobian(mj);
    auto h_jac = [H](const VectorXd&) { return H; };
    const nlohmann::json init = parse_init_string(init_text);
    if (init.at("type") != "gauss") throw ConfigError("exkf needs a gauss init");
    GaussianBelief belief{VectorXd::Constant(1, init["mean"][0].get<double>()),
                          MatrixXd::Constant(1, 1, init["cov"][0][0].get<double>())};
    if (continuous) {
      const MatrixXd s0 = model.diffusion(VectorXd::Zero(model.dim));
      const auto res =
          exkf_continuous(model.drift, jac, (s0 * s0.transpose()).eval(), h_fn,
                          h_jac, path, belief);
      for (const auto& b : res.trace) means.push_back(b.mean);
    } else {
      const MatrixXd R = parse_row_matrix(R_text);
      const double tau = tm.meta().tau;
      auto flow = [&model, tau](const VectorXd& x0) {
        VectorXd x = x0;
        const int sub = 20;
        for (int s = 0; s < sub; ++s) x += model.drift(x) * (tau / sub);
        return x;
      };
      const MatrixXd s0 = model.diffusion(VectorXd::Zero(model.dim));
      const auto trace = exkf_discrete(
          flow, numeric_jacobian(flow, model.dim),
          (s0 * s0.transpose() * tau).eval(), h_fn, h_jac, R, observations,
          belief);
      for (const auto& s : trace) means.push_back(s.posterior.mean);
    }
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }

  const double tau = tm.meta().tau;
  std::vector<std::string> header{"step", "t"};
  for (Index d = 0; d < means[0].size(); ++d)
    header.push_back("mean_" + std::to_string(d + 1));
  CsvWriter w(out_dir + "/trace_" + method + ".csv", header);
  for (std::size_t j = 0; j < means.size(); ++j) {
    std::vector<std::string> row{std::to_string(j),
                                 fmt_double(tau * static_cast<double>(j))};
    for (Index d = 0; d < means[j].size(); ++d)
      row.push_back(fmt_double(means[j][d]));
    w.write_row(row);
  }
  std::cout << "wrote " << out_dir << "/trace_" << method << ".csv ("
            << means.size() << " steps)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transfer-operator filtering benchmark"};
  app.require_subcommand(1);

  // ulam
  auto* ulam = app.add_subcommand("ulam", "estimate a transition matrix");
  std::string u_model = "ou", u_domain = "-6:6", u_grid = "100";
  std::vector<std::string> u_params;
  double u_tau = 0.1;
  int u_samples = 100, u_substeps = 1;
  std::uint64_t u_seed = 0;
  std::string u_estimator = "mc", u_oob = "discard", u_out = "matrix.pfo",
              u_spectral;
  ulam->add_option("--model", u_model, "model name (ou|benes|lorenz63)");
  ulam->add_option("--param", u_params, "model parameter key=value");
  ulam->add_option("--domain", u_domain, "domain lo:hi[,lo:hi...]");
  ulam->add_option("--grid", u_grid, "boxes per dimension n[,n...]");
  ulam->add_option("--tau", u_tau, "assimilation step");
  ulam->add_option("--samples", u_samples, "Monte-Carlo points per box");
  ulam->add_option("--substeps", u_substeps, "integrator substeps");
  ulam->add_option("--seed", u_seed, "random seed");
  ulam->add_option("--estimator", u_estimator, "mc|quadrature");
  ulam->add_option("--oob", u_oob, "out-of-domain policy discard|absorb");
  ulam->add_option("--out", u_out, "output matrix file");
  ulam->add_option("--spectral", u_spectral, "also store the eigendecomposition");

  // filter
  auto* filt = app.add_subcommand("filter", "run one filter");
  std::string f_method = "pfof", f_matrix, f_obs, f_init = "gauss(0,1)",
              f_H = "1", f_R = "1", f_model, f_out = "trace";
  std::vector<std::string> f_params;
  double f_gamma = 0.0;
  Index f_rank = 0;
  int f_particles = 0;
  std::uint64_t f_seed = 0;
  filt->add_option("--method", f_method, "pfof|lrpfof|pf|exkf");
  filt->add_option("--matrix", f_matrix, "matrix file")->required();
  filt->add_option("--obs", f_obs, "observation CSV")->required();
  filt->add_option("--init", f_init, "gauss(m,C) | benes(m,P) | uniform");
  filt->add_option("--H", f_H, "observation matrix rows ';'-separated");
  filt->add_option("--R", f_R, "observation covariance");
  filt->add_option("--gamma", f_gamma, "continuous noise scale");
  filt->add_option("--rank", f_rank, "lr-pfof truncation order");
  filt->add_option("--particles", f_particles, "particle count");
  filt->add_option("--model", f_model, "model for pf/exkf");
  filt->add_option("--param", f_params, "model parameter key=value");
  filt->add_option("--seed", f_seed, "random seed");
  filt->add_option("--out", f_out, "output directory");

  // run
  auto* run = app.add_subcommand("run", "run a config-driven experiment");
  std::string r_config;
  run->add_option("--config", r_config, "experiment JSON")->required();

  // rates
  auto* rates = app.add_subcommand("rates", "convergence-rate study");
  std::string s_study = "pfof", s_config;
  rates->add_option("--study", s_study, "pfof|pf");
  rates->add_option("--config", s_config, "study JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ulam)
      return run_ulam(u_model, u_params, u_domain, u_grid, u_tau, u_samples,
                      u_substeps, u_seed, u_estimator, u_oob, u_out,
                      u_spectral);
    if (*filt)
      return run_filter(f_method, f_matrix, f_obs, f_init, f_H, f_R, f_gamma,
                        f_rank, f_particles, f_model, f_params, f_seed, f_out);
    if (*run) {
      const auto cfg = parse_experiment_config(load_json(r_config));
      const auto summary = run_experiment(cfg);
      std::cout << "experiment done; outputs in " << cfg.output_dir << "\n";
      return 0;
    }
    if (*rates) {
      RateStudyConfig cfg =
          s_config.empty() ? RateStudyConfig{} : parse_rate_config(load_json(s_config));
      const RateStudyResult res =
          s_study == "pf" ? rate_study_pf(cfg) : rate_study_pfof(cfg);
      const std::string out =
          (cfg.output_dir.empty() ? std::string(".") : cfg.output_dir);
      fs::create_directories(out);
      write_rate_csv(res, out + "/rates.csv");
      std::cout << "study " << s_study << ": fitted slope " << res.slope
                << " +- " << res.slope_half_width << "; wrote " << out
                << "/rates.csv\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
