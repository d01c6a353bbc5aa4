#include "tfilter/partition.hpp"

#include <cmath>

namespace tfilter {

void Domain::validate() const {
  if (lower.size() != upper.size())
    throw ConfigError("Domain: bound vectors have different lengths");
  if (lower.size() < 1) throw ConfigError("Domain: dimension must be >= 1");
  for (Index d = 0; d < lower.size(); ++d) {
    if (!(lower[d] < upper[d]))
      throw ConfigError("Domain: lower[" + std::to_string(d) +
                        "] must be strictly below upper[" + std::to_string(d) +
                        "]");
    if (!std::isfinite(lower[d]) || !std::isfinite(upper[d]))
      throw ConfigError("Domain: bounds must be finite");
  }
}

Partition::Partition(Domain domain, std::vector<Index> counts)
    : domain_(std::move(domain)), counts_(std::move(counts)) {
  domain_.validate();
  if (static_cast<int>(counts_.size()) != domain_.dim())
    throw ConfigError("Partition: counts length " +
                      std::to_string(counts_.size()) +
                      " does not match domain dimension " +
                      std::to_string(domain_.dim()));
  n_boxes_ = 1;
  widths_.resize(domain_.dim());
  for (int d = 0; d < domain_.dim(); ++d) {
    if (counts_[d] < 1)
      throw ConfigError("Partition: counts[" + std::to_string(d) +
                        "] must be positive");
    n_boxes_ *= counts_[d];
    widths_[d] = (domain_.upper[d] - domain_.lower[d]) /
                 static_cast<double>(counts_[d]);
  }
  box_measure_ = widths_.prod();
}

std::vector<VectorXd> Partition::mass_points() const {
  std::vector<VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(n_boxes_));
  for (Index i = 0; i < n_boxes_; ++i) pts.push_back(center(i));
  return pts;
}

std::pair<VectorXd, VectorXd> Partition::box_bounds(Index box) const {
  std::vector<Index> mi = multi_index(box);
  VectorXd lo(dim()), hi(dim());
  for (int d = 0; d < dim(); ++d) {
    lo[d] = domain_.lower[d] + static_cast<double>(mi[d]) * widths_[d];
    hi[d] = lo[d] + widths_[d];
  }
  return {lo, hi};
}

Index Partition::flat_index(const std::vector<Index>& multi) const {
  if (static_cast<int>(multi.size()) != dim())
    throw ConfigError("flat_index: multi-index dimension mismatch");
  Index flat = 0;
  for (int d = 0; d < dim(); ++d) {
    if (multi[d] < 0 || multi[d] >= counts_[d])
      throw ConfigError("flat_index: component out of range");
    flat = flat * counts_[d] + multi[d];
  }
  return flat;
}

std::vector<Index> Partition::multi_index(Index flat) const {
  if (flat < 0 || flat >= n_boxes_)
    throw ConfigError("multi_index: flat index out of range");
  std::vector<Index> mi(static_cast<std::size_t>(dim()));
  for (int d = dim() - 1; d >= 0; --d) {
    mi[static_cast<std::size_t>(d)] = flat % counts_[d];
    flat /= counts_[d];
  }
  return mi;
}

VectorXd Partition::sample_in_box(Index box, RngStream& rng) const {
  auto [lo, hi] = box_bounds(box);
  VectorXd x(dim());
  for (int d = 0; d < dim(); ++d) x[d] = rng.uniform(lo[d], hi[d]);
  return x;
}

nlohmann::json Partition::to_json() const {
  nlohmann::json j;
  j["lower"] = std::vector<double>(domain_.lower.begin(), domain_.lower.end());
  j["upper"] = std::vector<double>(domain_.upper.begin(), domain_.upper.end());
  j["counts"] = counts_;
  return j;
}

Partition Partition::from_json(const nlohmann::json& j) {
  auto lower = j.at("lower").get<std::vector<double>>();
  auto upper = j.at("upper").get<std::vector<double>>();
  auto counts = j.at("counts").get<std::vector<Index>>();
  Domain d;
  d.lower = Eigen::Map<const VectorXd>(lower.data(),
                                       static_cast<Index>(lower.size()));
  d.upper = Eigen::Map<const VectorXd>(upper.data(),
                                       static_cast<Index>(upper.size()));
  return Partition(d, counts);
}

bool Partition::same_layout(const Partition& other, double rel_tol) const {
  if (counts_ != other.counts_) return false;
  for (int d = 0; d < dim(); ++d) {
    const double scale =
        std::max({1.0, std::abs(domain_.lower[d]), std::abs(domain_.upper[d])});
    if (std::abs(domain_.lower[d] - other.domain_.lower[d]) > rel_tol * scale)
      return false;
    if (std::abs(domain_.upper[d] - other.domain_.upper[d]) > rel_tol * scale)
      return false;
  }
  return true;
}

void validate_weights(const Partition& p, const WeightVector& w, double tol) {
  if (w.w.size() != p.n_boxes())
    throw ConfigError("WeightVector: length " + std::to_string(w.w.size()) +
                      " does not match partition size " +
                      std::to_string(p.n_boxes()));
  if ((w.w.array() < 0).any())
    throw NumericError("WeightVector: negative weight entry");
  if (w.normalized) {
    const double mass = w.w.sum() * p.box_measure();
    if (std::abs(mass - 1.0) > tol)
      throw NumericError("WeightVector: flagged normalized but total mass is " +
                         std::to_string(mass));
  }
}

Partition build_uniform_partition(const Domain& domain,
                                  const std::vector<Index>& counts) {
  return Partition(domain, counts);
}

namespace {

// Tensor trapezoid integral of rho over one box with k nodes per axis.
double box_integral(const Partition& p, Index box,
                    const std::function<double(const VectorXd&)>& rho, int k) {
  const int d = p.dim();
  auto [lo, hi] = p.box_bounds(box);
  const Index total = static_cast<Index>(std::pow(static_cast<double>(k), d));
  VectorXd x(d);
  double acc = 0.0;
  std::vector<int> node(static_cast<std::size_t>(d), 0);
  for (Index it = 0; it < total; ++it) {
    double wq = 1.0;
    for (int a = 0; a < d; ++a) {
      const double h = (hi[a] - lo[a]) / (k - 1);
      const int na = node[static_cast<std::size_t>(a)];
      x[a] = lo[a] + na * h;
      // top edge evaluates just inside the half-open box
      if (na == k - 1) x[a] = hi[a] - (hi[a] - lo[a]) * 1e-12;
      wq *= (na == 0 || na == k - 1) ? 0.5 * h : h;
    }
    const double v = rho(x);
    if (!(v >= -1e-12))
      throw NumericError("project_density: density is negative or non-finite");
    acc += wq * std::max(v, 0.0);
    for (int a = d - 1; a >= 0; --a) {
      if (++node[static_cast<std::size_t>(a)] < k) break;
      node[static_cast<std::size_t>(a)] = 0;
    }
  }
  return acc;
}

}  // namespace

WeightVector project_density(const Partition& p,
                             const std::function<double(const VectorXd&)>& rho,
                             const ProjectionOptions& opts) {
  if (opts.nodes_per_dim < 2)
    throw ConfigError("project_density: need at least 2 quadrature nodes");
  WeightVector out;
  out.w.resize(p.n_boxes());
  for (Index i = 0; i < p.n_boxes(); ++i)
    out.w[i] = box_integral(p, i, rho, opts.nodes_per_dim) / p.box_measure();

  const double captured = out.w.sum() * p.box_measure();
  if (opts.require_probability) {
    if (captured < opts.min_captured)
      throw NumericError(
          "project_density: only " + std::to_string(captured) +
          " of the density mass falls inside the domain (domain too small)");
    out.w /= captured;
    out.normalized = true;
  } else {
    out.normalized = std::abs(captured - 1.0) <= 1e-9;
  }
  return out;
}

Moments moments(const Partition& p, const WeightVector& w) {
  validate_weights(p, w);
  if (!w.normalized)
    throw ConfigError("moments: weight vector must be normalized");
  const int d = p.dim();
  VectorXd mean = VectorXd::Zero(d);
  for (Index i = 0; i < p.n_boxes(); ++i)
    mean += w.w[i] * p.box_measure() * p.center(i);
  MatrixXd cov = MatrixXd::Zero(d, d);
  for (Index i = 0; i < p.n_boxes(); ++i) {
    const VectorXd c = p.center(i) - mean;
    cov += w.w[i] * p.box_measure() * (c * c.transpose());
  }
  return {mean, cov};
}

}  // namespace tfilter
