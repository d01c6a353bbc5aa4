#ifndef TFILTER_PARTITION_HPP
#define TFILTER_PARTITION_HPP

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tfilter/common.hpp"
#include "tfilter/rng.hpp"

namespace tfilter {

/// Rectangular phase-space domain [lower_1, upper_1) x ... x [lower_d, upper_d).
struct Domain {
  VectorXd lower;
  VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  double volume() const { return (upper - lower).prod(); }
  void validate() const;
};

/// Uniform axis-aligned box partition of a Domain.
///
/// Boxes are half-open [a, b) along every axis, so each point of the domain
/// except the top faces lies in exactly one box. Box indices are row-major
/// over dimensions with the last dimension varying fastest:
///   flat = ((i_0 * counts_1) + i_1) * counts_2 + ... + i_{d-1}.
/// The mass point of a box is its geometric center.
class Partition {
public:
  Partition(Domain domain, std::vector<Index> counts);

  int dim() const { return domain_.dim(); }
  Index n_boxes() const { return n_boxes_; }
  const Domain& domain() const { return domain_; }
  const std::vector<Index>& counts() const { return counts_; }
  /// Lebesgue volume of one box (identical for all boxes).
  double box_measure() const { return box_measure_; }
  double width(int d) const { return widths_[d]; }

  /// Box containing x, or nullopt when x is outside the domain
  /// (points exactly on a top face count as outside).
  std::optional<Index> locate(const VectorXd& x) const {
    if (x.size() != domain_.lower.size())
      throw ConfigError("locate: point dimension " + std::to_string(x.size()) +
                        " does not match partition dimension " +
                        std::to_string(dim()));
    Index flat = 0;
    for (int d = 0; d < dim(); ++d) {
      const double lo = domain_.lower[d];
      if (x[d] < lo || x[d] >= domain_.upper[d]) return std::nullopt;
      Index i = static_cast<Index>((x[d] - lo) / widths_[d]);
      if (i >= counts_[d]) i = counts_[d] - 1;  // guards rounding at the top
      flat = flat * counts_[d] + i;
    }
    return flat;
  }

  /// Mass point (geometric center) of box i.
  VectorXd center(Index box) const {
    VectorXd c(dim());
    std::vector<Index> mi = multi_index(box);
    for (int d = 0; d < dim(); ++d)
      c[d] = domain_.lower[d] + (static_cast<double>(mi[d]) + 0.5) * widths_[d];
    return c;
  }

  /// Mass points of every box, in flat-index order.
  std::vector<VectorXd> mass_points() const;

  /// Lower and upper corners of box i.
  std::pair<VectorXd, VectorXd> box_bounds(Index box) const;

  Index flat_index(const std::vector<Index>& multi) const;
  std::vector<Index> multi_index(Index flat) const;

  /// Uniform draw inside box i.
  VectorXd sample_in_box(Index box, RngStream& rng) const;

  nlohmann::json to_json() const;
  static Partition from_json(const nlohmann::json& j);
  bool same_layout(const Partition& other, double rel_tol = 1e-12) const;

private:
  Domain domain_;
  std::vector<Index> counts_;
  Index n_boxes_;
  VectorXd widths_;
  double box_measure_;
};

/// Coefficients of a density in the indicator basis (density convention:
/// entry i is the average density over box i, so sum_i w[i] * box_measure = 1
/// for a probability density).
struct WeightVector {
  VectorXd w;
  bool normalized = false;
};

/// Checks nonnegativity and, when flagged normalized, unit mass within tol.
void validate_weights(const Partition& p, const WeightVector& w,
                      double tol = 1e-9);

Partition build_uniform_partition(const Domain& domain,
                                  const std::vector<Index>& counts);

struct ProjectionOptions {
  int nodes_per_dim = 16;          // tensor trapezoid nodes per box per axis
  bool require_probability = true; // reject when captured mass < min_captured
  double min_captured = 0.99;
};

/// L1 projection pi_N: per-box average of rho by tensor trapezoid quadrature.
/// For probability densities the result is rescaled to unit mass.
WeightVector project_density(const Partition& p,
                             const std::function<double(const VectorXd&)>& rho,
                             const ProjectionOptions& opts = {});

struct Moments {
  VectorXd mean;
  MatrixXd cov;
};

/// Mean and covariance of the piecewise-constant density at the mass points.
Moments moments(const Partition& p, const WeightVector& w);

}  // namespace tfilter

#endif
