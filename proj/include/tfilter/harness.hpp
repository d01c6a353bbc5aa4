#ifndef TFILTER_HARNESS_HPP
#define TFILTER_HARNESS_HPP

#include <string>
#include <vector>

#include <json.hpp>

#include "tfilter/baselines.hpp"
#include "tfilter/filter.hpp"
#include "tfilter/models.hpp"
#include "tfilter/spectral.hpp"

namespace tfilter {

struct FilterSpec {
  std::string method;  // pfof | lrpfof | pf | exkf
  Index rank = 0;      // lrpfof truncation
  int particles = 0;   // pf ensemble size
};

/// One experiment cell: model + partition + estimator + observation setup +
/// the filters to run. Parsed and validated from a single JSON document.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  nlohmann::json model;  // {"name": "ou"|"benes"|"lorenz63", parameters...}
  Domain domain;
  std::vector<Index> counts;
  double tau = 0.1;
  int steps = 0;
  nlohmann::json x0;    // truth initial law
  nlohmann::json init;  // filter prior
  // estimator
  std::string estimator = "mc";  // mc | quadrature
  int n_samples = 100;
  int substeps = 1;
  std::string oob = "discard";
  std::string matrix_path;  // when set, load instead of estimating
  // observation
  std::string obs_type = "discrete";  // discrete | continuous
  MatrixXd H;
  MatrixXd R;          // discrete observation noise
  double gamma = 0.0;  // continuous noise scale
  std::vector<FilterSpec> filters;
  std::vector<int> pdf_steps;
  bool dump_weights = false;

  nlohmann::json raw;  // original document, echoed into the summary
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);

SdeModel make_model(const nlohmann::json& model_cfg);
std::function<MatrixXd(const VectorXd&)> make_drift_jacobian(
    const nlohmann::json& model_cfg);

/// Filter prior from an init spec ("gauss", "benes", "uniform").
WeightVector make_init_weights(const nlohmann::json& init, const Partition& p);
InitialSampler make_init_sampler(const nlohmann::json& init, int dim);

/// Parses CLI-style init strings: gauss(m,C), benes(m,P), uniform.
nlohmann::json parse_init_string(const std::string& text);

/// Runs one experiment; emits truth/obs/trace/pdf/metrics/timings files into
/// cfg.output_dir and returns the run summary.
nlohmann::json run_experiment(const ExperimentConfig& cfg);

struct RateStudyConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  // scalar Ornstein-Uhlenbeck test problem
  double lambda = 0.5;
  double tau = 0.1;
  double m0 = 2.0;
  double C0 = 0.1;
  double sigma = 1.0;  // observation noise std
  Domain domain;       // defaults to [-6, 6]
  int steps = 20;
  std::vector<Index> N_values = {25, 50, 100, 200, 400};
  std::vector<int> m_values = {100, 316, 1000, 3162, 10000};
  int seeds = 20;
  Index comparison_grid = 50;  // binning partition for the particle study

  RateStudyConfig() {
    domain.lower = VectorXd::Constant(1, -6.0);
    domain.upper = VectorXd::Constant(1, 6.0);
  }
};

RateStudyConfig parse_rate_config(const nlohmann::json& j);

struct RateStudyResult {
  VectorXd abscissae;  // N or m, strictly increasing
  VectorXd tv_mean;
  VectorXd tv_std;
  double slope = 0.0;
  double slope_half_width = 0.0;  // 95% confidence half width
};

/// Projection-error rate of the grid filter against the exact Kalman
/// posterior, quadrature estimator (no Monte-Carlo noise), one shared
/// observation sequence. Replicates are identical by construction.
RateStudyResult rate_study_pfof(const RateStudyConfig& cfg);

/// Particle-count rate of the SIR filter against the Kalman posterior binned
/// on the comparison partition; `seeds` independent particle replicates.
RateStudyResult rate_study_pf(const RateStudyConfig& cfg);

void write_rate_csv(const RateStudyResult& r, const std::string& path);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double half_width = 0.0;
};

/// Ordinary least squares on (log x, log y) with a 95% slope half-width.
SlopeFit fit_loglog_slope(const VectorXd& x, const VectorXd& y);

struct Marginal1D {
  VectorXd centers;
  VectorXd density;
};
struct Marginal2D {
  VectorXd centers_a;
  VectorXd centers_b;
  MatrixXd density;  // rows follow dim_a cells
};

/// Sums the weight over the complementary axes; outputs are normalized
/// densities on the axis grids.
Marginal1D marginal_1d(const WeightVector& w, const Partition& p, int dim);
Marginal2D marginal_2d(const WeightVector& w, const Partition& p, int dim_a,
                       int dim_b);

/// Excess kurtosis of a 1-D marginal grid (0 for a Gaussian).
double excess_kurtosis(const Marginal1D& m);

}  // namespace tfilter

#endif
