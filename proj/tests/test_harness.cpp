#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tfilter/csv.hpp"
#include "tfilter/harness.hpp"

using namespace tfilter;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

nlohmann::json small_ou_config(const std::string& out_dir,
                               std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["output_dir"] = out_dir;
  j["model"] = {{"name", "ou"}, {"lambda", 0.5}};
  j["domain"] = {{"lower", {-6.0}}, {"upper", {6.0}}};
  j["grid"] = {120};
  j["tau"] = 0.1;
  j["steps"] = 8;
  j["x0"] = {{"type", "gauss"}, {"mean", {2.0}}, {"cov", {{0.1}}}};
  j["init"] = {{"type", "gauss"}, {"mean", {2.0}}, {"cov", {{0.1}}}};
  j["ulam"] = {{"estimator", "quadrature"}};
  j["observation"] = {{"type", "discrete"}, {"H", {{1.0}}}, {"R", {{1.0}}}};
  j["filters"] = {{{"method", "pfof"}},
                  {{"method", "lrpfof"}, {"rank", 120}},
                  {{"method", "pf"}, {"particles", 200}},
                  {{"method", "exkf"}}};
  j["pdf_steps"] = {0, 4, 8};
  return j;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  const auto good = small_ou_config("harness_out/parse", 1);
  const auto cfg = parse_experiment_config(good);
  CHECK(cfg.counts[0] == 120);
  CHECK(cfg.filters.size() == 4);
  CHECK(cfg.filters[1].rank == 120);
  CHECK(cfg.filters[2].particles == 200);

  auto bad = good;
  bad["model"]["name"] = "unknown";
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["grid"] = {120, 4};
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["tau"] = -1.0;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["filters"] = {{{"method", "lrpfof"}}};  // missing rank
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["observation"] = {{"type", "continuous"}, {"H", {{1.0}}}, {"gamma", 0.0}};
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["pdf_steps"] = {99};
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  bad = good;
  bad["ulam"] = {{"matrix", "does/not/exist.pfo"}};
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
}

TEST_CASE("init strings parse into init specs") {
  auto g = parse_init_string("gauss(2,0.1)");
  CHECK(g["type"] == "gauss");
  CHECK(g["mean"][0] == doctest::Approx(2.0));
  CHECK(g["cov"][0][0] == doctest::Approx(0.1));
  auto b = parse_init_string("benes(0,2)");
  CHECK(b["type"] == "benes");
  CHECK(b["P"] == doctest::Approx(2.0));
  CHECK(parse_init_string("uniform")["type"] == "uniform");
  CHECK_THROWS_AS(parse_init_string("delta(1)"), ConfigError);
}

TEST_CASE("experiment runs are deterministic and complete") {
  fs::remove_all("harness_out/det_a");
  fs::remove_all("harness_out/det_b");
  const auto cfg_a =
      parse_experiment_config(small_ou_config("harness_out/det_a", 42));
  const auto cfg_b =
      parse_experiment_config(small_ou_config("harness_out/det_b", 42));
  const auto sa = run_experiment(cfg_a);
  const auto sb = run_experiment(cfg_b);

  // identical config + seed -> byte-identical metric files
  CHECK(slurp("harness_out/det_a/metrics.csv") ==
        slurp("harness_out/det_b/metrics.csv"));
  CHECK(slurp("harness_out/det_a/truth.csv") ==
        slurp("harness_out/det_b/truth.csv"));
  CHECK(slurp("harness_out/det_a/obs.csv") ==
        slurp("harness_out/det_b/obs.csv"));

  for (const char* f :
       {"metrics.csv", "timings.csv", "truth.csv", "obs.csv", "summary.json",
        "pdf_t0.csv", "pdf_t4.csv", "pdf_t8.csv", "trace_pfof.csv",
        "trace_lrpfof_r120.csv", "trace_pf_m200.csv", "trace_exkf.csv"})
    CHECK(fs::exists(std::string("harness_out/det_a/") + f));

  // every emitted posterior density integrates to one on its partition
  const auto pdf = read_csv("harness_out/det_a/pdf_t8.csv");
  const double width = 12.0 / 120;
  for (const char* col : {"density_pfof", "density_lrpfof_r120",
                          "density_pf_m200"}) {
    const int c = pdf.column(col);
    REQUIRE(c >= 0);
    double mass = 0.0;
    for (const auto& row : pdf.rows) mass += row[static_cast<std::size_t>(c)];
    CHECK(mass * width == doctest::Approx(1.0).epsilon(1e-6));
  }

  // a different seed changes the data
  fs::remove_all("harness_out/det_c");
  const auto cfg_c =
      parse_experiment_config(small_ou_config("harness_out/det_c", 43));
  run_experiment(cfg_c);
  CHECK(slurp("harness_out/det_a/obs.csv") !=
        slurp("harness_out/det_c/obs.csv"));

  // full-rank lrpfof matches pfof step by step in the metrics
  std::ifstream mf("harness_out/det_a/metrics.csv");
  std::string line;
  std::getline(mf, line);
  std::map<std::string, std::vector<double>> tv;
  while (std::getline(mf, line)) {
    std::stringstream ss(line);
    std::string step, method, t, tvs, mse;
    std::getline(ss, step, ',');
    std::getline(ss, method, ',');
    std::getline(ss, t, ',');
    std::getline(ss, tvs, ',');
    std::getline(ss, mse, ',');
    tv[method].push_back(std::stod(tvs));
  }
  REQUIRE(tv.count("pfof"));
  REQUIRE(tv.count("lrpfof_r120"));
  for (std::size_t j = 0; j < tv["pfof"].size(); ++j)
    CHECK(std::abs(tv["pfof"][j] - tv["lrpfof_r120"][j]) < 1e-6);
  // grid filter tracks the Kalman oracle; the small particle cloud is worse
  CHECK(tv["pfof"].back() < 0.05);
  CHECK(tv["pf_m200"].back() > tv["pfof"].back());
}

TEST_CASE("continuous-time experiment completes with marginals") {
  fs::remove_all("harness_out/zakai");
  nlohmann::json j;
  j["seed"] = 3;
  j["output_dir"] = "harness_out/zakai";
  j["model"] = {{"name", "lorenz63"}, {"sigma", 2.0}};
  j["domain"] = {{"lower", {-25.0, -25.0, -30.0}},
                 {"upper", {25.0, 25.0, 20.0}}};
  j["grid"] = {10, 10, 10};
  j["tau"] = 0.02;
  j["steps"] = 25;
  j["x0"] = {{"type", "gauss"},
             {"mean", {0.0, 0.0, 0.0}},
             {"cov", {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}}};
  j["init"] = j["x0"];
  // corner boxes map entirely outside over one step; absorb keeps them inside
  j["ulam"] = {{"estimator", "mc"},
               {"n_samples", 32},
               {"substeps", 4},
               {"oob", "absorb"}};
  j["observation"] = {
      {"type", "continuous"}, {"H", {{0.0, 1.0, 0.0}}}, {"gamma", 0.2}};
  j["filters"] = {{{"method", "pfof"}}, {{"method", "exkf"}}};

  const auto cfg = parse_experiment_config(j);
  const auto summary = run_experiment(cfg);
  CHECK(summary["filters"].count("pfof") == 1);
  CHECK(summary["filters"]["pfof"].count("log_normalizer") == 1);
  CHECK(summary["filters"]["exkf"].count("covariance_repairs") == 1);
  for (const char* f :
       {"marginal_1.csv", "marginal_2.csv", "marginal_3.csv",
        "marginal_12.csv", "marginal_13.csv", "marginal_23.csv",
        "trace_pfof.csv", "trace_exkf.csv"})
    CHECK(fs::exists(std::string("harness_out/zakai/") + f));

  // mse stays finite for both methods
  std::ifstream mf("harness_out/zakai/metrics.csv");
  std::string line;
  std::getline(mf, line);
  while (std::getline(mf, line)) {
    const auto pos = line.rfind(',');
    CHECK(std::isfinite(std::stod(line.substr(pos + 1))));
  }
}

TEST_CASE("marginals of a product density factorize") {
  Domain d;
  d.lower = VectorXd::Zero(2);
  d.upper = VectorXd::Ones(2);
  const Partition p = build_uniform_partition(d, {8, 6});
  VectorXd fa(8), fb(6);
  for (Index i = 0; i < 8; ++i) fa[i] = 1.0 + std::sin(0.7 * i + 0.3);
  for (Index i = 0; i < 6; ++i) fb[i] = 1.0 + 0.5 * std::cos(1.1 * i);
  fa /= fa.sum() * p.width(0);
  fb /= fb.sum() * p.width(1);

  WeightVector w;
  w.w.resize(48);
  for (Index a = 0; a < 8; ++a)
    for (Index b = 0; b < 6; ++b) w.w[p.flat_index({a, b})] = fa[a] * fb[b];
  w.normalized = true;
  validate_weights(p, w);

  const auto ma = marginal_1d(w, p, 0);
  const auto mb = marginal_1d(w, p, 1);
  for (Index i = 0; i < 8; ++i)
    CHECK(ma.density[i] == doctest::Approx(fa[i]).epsilon(1e-9));
  for (Index i = 0; i < 6; ++i)
    CHECK(mb.density[i] == doctest::Approx(fb[i]).epsilon(1e-9));

  // the 2-D marginal is the outer product of the 1-D marginals
  const auto mab = marginal_2d(w, p, 0, 1);
  for (Index a = 0; a < 8; ++a)
    for (Index b = 0; b < 6; ++b)
      CHECK(mab.density(a, b) ==
            doctest::Approx(ma.density[a] * mb.density[b]).epsilon(1e-9));

  // marginals normalize to one
  CHECK(ma.density.sum() * p.width(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mab.density.sum() * p.width(0) * p.width(1) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("marginal of a marginal is the direct lower marginal") {
  Domain d;
  d.lower = VectorXd::Zero(3);
  d.upper = VectorXd::Ones(3);
  const Partition p = build_uniform_partition(d, {4, 5, 3});
  RngStream rng(9);
  WeightVector w;
  w.w.resize(p.n_boxes());
  for (Index i = 0; i < p.n_boxes(); ++i) w.w[i] = rng.uniform();
  w.w /= w.w.sum() * p.box_measure();
  w.normalized = true;

  const auto m02 = marginal_2d(w, p, 0, 2);
  const auto m0 = marginal_1d(w, p, 0);
  // sum the 2-D marginal over its second axis
  for (Index a = 0; a < 4; ++a) {
    double acc = 0.0;
    for (Index c = 0; c < 3; ++c) acc += m02.density(a, c) * p.width(2);
    CHECK(acc == doctest::Approx(m0.density[a]).epsilon(1e-9));
  }

  CHECK_THROWS_AS(marginal_1d(w, p, 5), ConfigError);
  CHECK_THROWS_AS(marginal_2d(w, p, 1, 1), ConfigError);
}

TEST_CASE("excess kurtosis identifies Gaussian-like marginals") {
  Marginal1D gauss;
  const int n = 400;
  gauss.centers.resize(n);
  gauss.density.resize(n);
  for (int i = 0; i < n; ++i) {
    gauss.centers[i] = -6.0 + 12.0 * (i + 0.5) / n;
    gauss.density[i] = normal_pdf(gauss.centers[i], 0.3, 1.7);
  }
  CHECK(std::abs(excess_kurtosis(gauss)) < 0.01);

  Marginal1D uniform = gauss;
  for (int i = 0; i < n; ++i)
    uniform.density[i] = (std::abs(uniform.centers[i]) < 3.0) ? 1.0 / 6 : 0.0;
  CHECK(excess_kurtosis(uniform) == doctest::Approx(-1.2).epsilon(1e-2));
}

TEST_CASE("log-log slope fitting") {
  VectorXd x(5), y(5);
  for (int i = 0; i < 5; ++i) {
    x[i] = std::pow(2.0, i + 3);
    y[i] = 7.0 * std::pow(x[i], -0.5);
  }
  const auto f = fit_loglog_slope(x, y);
  CHECK(f.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(f.half_width == doctest::Approx(0.0).epsilon(1e-9));

  // noisy points keep the slope inside the confidence interval
  RngStream rng(4);
  for (int i = 0; i < 5; ++i) y[i] *= std::exp(0.05 * rng.normal());
  const auto g = fit_loglog_slope(x, y);
  CHECK(std::abs(g.slope + 0.5) < g.half_width + 0.1);
  CHECK_THROWS_AS(fit_loglog_slope(x.head(1), y.head(1)), ConfigError);
}

TEST_CASE("rate study smoke runs") {
  RateStudyConfig cfg;
  cfg.seed = 11;
  cfg.steps = 6;
  cfg.N_values = {25, 50, 100};
  cfg.m_values = {50, 100, 200};
  cfg.seeds = 3;
  cfg.comparison_grid = 40;

  const auto pfof = rate_study_pfof(cfg);
  CHECK(pfof.abscissae.size() == 3);
  CHECK((pfof.tv_mean.array() > 0).all());
  CHECK(pfof.slope < 0.0);
  for (Index i = 0; i < 3; ++i) CHECK(pfof.tv_std[i] == 0.0);  // quadrature

  const auto pf = rate_study_pf(cfg);
  CHECK(pf.abscissae.size() == 3);
  CHECK((pf.tv_mean.array() > 0).all());
  CHECK(pf.slope < 0.0);

  fs::create_directories("harness_out");
  write_rate_csv(pf, "harness_out/rates_smoke.csv");
  const auto t = read_csv("harness_out/rates_smoke.csv");
  CHECK(t.rows.size() == 3);
}
