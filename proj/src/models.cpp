#include "tfilter/models.hpp"

#include <cmath>

namespace tfilter {

double ou_step_variance(double lambda, double dt, OuVariance v) {
  switch (v) {
    case OuVariance::paper:
      return std::exp(-2.0 * lambda * dt);
    case OuVariance::textbook:
      return (1.0 - std::exp(-2.0 * lambda * dt)) / (2.0 * lambda);
  }
  throw ConfigError("ou_step_variance: unknown variance kind");
}

SdeModel ou_model(double lambda, OuVariance v) {
  if (!(lambda > 0)) throw ConfigError("ou_model: lambda must be positive");
  SdeModel m;
  m.dim = 1;
  m.name = "ou";
  m.drift = [lambda](const VectorXd& x) { return VectorXd(-lambda * x); };
  m.diffusion = [](const VectorXd&) {
    return MatrixXd::Identity(1, 1).eval();
  };
  m.exact_step = [lambda, v](const VectorXd& x, double dt, RngStream& rng) {
    const double decay = std::exp(-lambda * dt);
    const double sd = std::sqrt(ou_step_variance(lambda, dt, v));
    VectorXd out(1);
    out[0] = decay * x[0] + sd * rng.normal();
    return out;
  };
  return m;
}

SdeModel benes_model() {
  SdeModel m;
  m.dim = 1;
  m.name = "benes";
  m.drift = [](const VectorXd& x) {
    VectorXd b(1);
    b[0] = std::tanh(x[0]);
    return b;
  };
  m.diffusion = [](const VectorXd&) {
    return MatrixXd::Identity(1, 1).eval();
  };
  return m;
}

SdeModel lorenz63_model(const Lorenz63Params& p) {
  SdeModel m;
  m.dim = 3;
  m.name = "lorenz63";
  m.drift = [p](const VectorXd& v) {
    VectorXd f(3);
    f[0] = p.a * (v[1] - v[0]);
    f[1] = -p.a * v[0] - v[1] - v[0] * v[2];
    f[2] = v[0] * v[1] - p.b * v[2] - p.b * (p.r + p.a);
    return f;
  };
  MatrixXd sigma = MatrixXd::Zero(3, 3);
  sigma(0, 0) = p.sigma1;
  sigma(1, 1) = p.sigma2;
  sigma(2, 2) = p.sigma3;
  m.diffusion = [sigma](const VectorXd&) { return sigma; };
  return m;
}

std::function<MatrixXd(const VectorXd&)> lorenz63_drift_jacobian(
    const Lorenz63Params& p) {
  return [p](const VectorXd& v) {
    MatrixXd J(3, 3);
    J << -p.a, p.a, 0.0,
        -p.a - v[2], -1.0, -v[0],
        v[1], v[0], -p.b;
    return J;
  };
}

}  // namespace tfilter
