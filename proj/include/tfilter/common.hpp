#ifndef TFILTER_COMMON_HPP
#define TFILTER_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tfilter {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

/// Invalid configuration or broken call contract. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during a run (divergence, singular system, collapse).
/// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

/// CDF of N(mean, var) at x.
inline double normal_cdf(double x, double mean, double var) {
  return normal_cdf((x - mean) / std::sqrt(var));
}

inline bool approx_eq(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

}  // namespace tfilter

#endif
