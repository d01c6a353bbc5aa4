#include "tfilter/ulam.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tfilter/parallel.hpp"
#include "tfilter/quadrature.hpp"

namespace tfilter {

TransitionMatrix TransitionMatrix::from_dense(MatrixXd entries,
                                              Partition partition,
                                              UlamMeta meta) {
  if (entries.rows() != entries.cols())
    throw ConfigError("TransitionMatrix: matrix must be square");
  if (entries.rows() != partition.n_boxes())
    throw ConfigError("TransitionMatrix: size does not match partition");
  TransitionMatrix tm(std::move(partition), std::move(meta));
  tm.n_ = entries.rows();
  tm.dense_ = std::move(entries);
  tm.sparse_storage_ = false;
  return tm;
}

TransitionMatrix TransitionMatrix::from_sparse(SparseRowMatrix entries,
                                               Partition partition,
                                               UlamMeta meta) {
  if (entries.rows() != entries.cols())
    throw ConfigError("TransitionMatrix: matrix must be square");
  if (entries.rows() != partition.n_boxes())
    throw ConfigError("TransitionMatrix: size does not match partition");
  TransitionMatrix tm(std::move(partition), std::move(meta));
  tm.n_ = entries.rows();
  entries.makeCompressed();
  tm.csr_ = std::move(entries);
  tm.sparse_storage_ = true;
  return tm;
}

const MatrixXd& TransitionMatrix::dense_entries() const {
  if (sparse_storage_)
    throw ConfigError("TransitionMatrix: stored in CSR form, not dense");
  return dense_;
}

const SparseRowMatrix& TransitionMatrix::sparse_entries() const {
  if (!sparse_storage_)
    throw ConfigError("TransitionMatrix: stored dense, not CSR");
  return csr_;
}

RowVectorXd TransitionMatrix::apply_left(const RowVectorXd& w) const {
  if (w.size() != n_)
    throw ConfigError("apply_left: vector length " + std::to_string(w.size()) +
                      " does not match matrix size " + std::to_string(n_));
  if (sparse_storage_) return w * csr_;
  return w * dense_;
}

VectorXd TransitionMatrix::row_sums() const {
  if (!sparse_storage_) return dense_.rowwise().sum();
  VectorXd s = VectorXd::Zero(n_);
  for (Index i = 0; i < n_; ++i)
    for (SparseRowMatrix::InnerIterator it(csr_, i); it; ++it)
      s[i] += it.value();
  return s;
}

void TransitionMatrix::validate_stochastic(double tol) const {
  const VectorXd sums = row_sums();
  for (Index i = 0; i < n_; ++i)
    if (std::abs(sums[i] - 1.0) > tol)
      throw NumericError("TransitionMatrix: row " + std::to_string(i) +
                         " sums to " + std::to_string(sums[i]));
  double lo = 0.0, hi = 1.0;
  if (sparse_storage_) {
    for (Index i = 0; i < n_; ++i)
      for (SparseRowMatrix::InnerIterator it(csr_, i); it; ++it) {
        lo = std::min(lo, it.value());
        hi = std::max(hi, it.value());
      }
  } else {
    lo = dense_.minCoeff();
    hi = dense_.maxCoeff();
  }
  if (lo < -tol || hi > 1.0 + tol)
    throw NumericError("TransitionMatrix: entry outside [0,1]");
}

double TransitionMatrix::leading_eigenvalue_magnitude(int iterations) const {
  RowVectorXd w(n_);
  for (Index i = 0; i < n_; ++i)
    w[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
  w /= w.norm();
  double ratio = 1.0, prev = 0.0;
  for (int it = 0; it < iterations; ++it) {
    RowVectorXd next = apply_left(w);
    const double nrm = next.norm();
    if (nrm == 0.0) return 0.0;
    prev = ratio;
    ratio = nrm;
    w = next / nrm;
    if (it > 10 && std::abs(ratio - prev) <= 1e-10 * ratio) break;
  }
  return ratio;
}

double entry_std_error(const TransitionMatrix& tm, Index i, Index j) {
  if (tm.meta().estimator != "mc") return 0.0;
  const double keep = 1.0 - tm.meta().discard_fraction[i];
  const double n_eff = tm.meta().n_samples * keep;
  if (n_eff <= 0) return 0.0;
  const double p = tm.entry(i, j);
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / n_eff);
}

UlamDiagnostics diagnostics(const TransitionMatrix& tm) {
  UlamDiagnostics d;
  d.discard_fraction = tm.meta().discard_fraction;
  d.effective_samples =
      (1.0 - tm.meta().discard_fraction.array()) * tm.meta().n_samples;
  return d;
}

namespace {

// Start points for one source box: uniform draws, or a jittered sub-lattice.
std::vector<VectorXd> start_points(const Partition& p, Index box,
                                   const UlamOptions& opts, RngStream& rng) {
  std::vector<VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(opts.n_samples));
  if (opts.start_points == StartPointKind::uniform) {
    for (int l = 0; l < opts.n_samples; ++l)
      pts.push_back(p.sample_in_box(box, rng));
    return pts;
  }
  const int d = p.dim();
  const int k = static_cast<int>(
      std::ceil(std::pow(static_cast<double>(opts.n_samples), 1.0 / d)));
  auto [lo, hi] = p.box_bounds(box);
  std::vector<int> cell(static_cast<std::size_t>(d), 0);
  for (int l = 0; l < opts.n_samples; ++l) {
    VectorXd x(d);
    for (int a = 0; a < d; ++a) {
      const double h = (hi[a] - lo[a]) / k;
      x[a] = lo[a] + (cell[static_cast<std::size_t>(a)] + rng.uniform()) * h;
    }
    pts.push_back(x);
    for (int a = d - 1; a >= 0; --a) {
      if (++cell[static_cast<std::size_t>(a)] < k) break;
      cell[static_cast<std::size_t>(a)] = 0;
    }
  }
  return pts;
}

VectorXd clamp_into_domain(const Partition& p, VectorXd x) {
  for (int d = 0; d < p.dim(); ++d) {
    const double lo = p.domain().lower[d];
    const double hi = p.domain().upper[d];
    const double eps = (hi - lo) * 1e-12;
    x[d] = std::min(std::max(x[d], lo), hi - eps);
  }
  return x;
}

}  // namespace

TransitionMatrix estimate_transition_matrix(const Partition& p,
                                            const SdeModel& m, double tau,
                                            const UlamOptions& opts) {
  if (opts.n_samples < 1)
    throw ConfigError("estimate_transition_matrix: n_samples must be >= 1");
  if (m.dim != p.dim())
    throw ConfigError("estimate_transition_matrix: model/partition dimension mismatch");
  const Index n = p.n_boxes();
  const bool sparse = n > opts.dense_threshold;
  const RngStream master(opts.seed);

  MatrixXd dense;
  if (!sparse) dense = MatrixXd::Zero(n, n);
  std::vector<std::vector<std::pair<Index, double>>> sparse_rows;
  if (sparse) sparse_rows.resize(static_cast<std::size_t>(n));
  VectorXd discard = VectorXd::Zero(n);
  std::vector<std::string> row_errors(static_cast<std::size_t>(n));

  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t row) {
        const Index i = static_cast<Index>(row);
        RngStream rng = master.split(static_cast<std::uint64_t>(i));
        std::vector<Index> landings;
        landings.reserve(static_cast<std::size_t>(opts.n_samples));
        int n_out = 0;
        for (const VectorXd& x0 : start_points(p, i, opts, rng)) {
          VectorXd y = flow_sample(m, x0, tau, opts.substeps, rng);
          auto j = p.locate(y);
          if (!j && opts.oob == OutOfDomainPolicy::absorb_boundary) {
            ++n_out;  // counted as absorbed
            j = p.locate(clamp_into_domain(p, y));
          }
          if (j)
            landings.push_back(*j);
          else
            ++n_out;
        }
        discard[i] = static_cast<double>(n_out) / opts.n_samples;
        if (landings.empty()) {
          row_errors[row] = "box " + std::to_string(i) + ": all " +
                            std::to_string(n_out) +
                            " flow samples left the domain";
          return;
        }
        std::sort(landings.begin(), landings.end());
        const double inv = 1.0 / static_cast<double>(landings.size());
        std::size_t a = 0;
        while (a < landings.size()) {
          std::size_t b = a;
          while (b < landings.size() && landings[b] == landings[a]) ++b;
          const double v = static_cast<double>(b - a) * inv;
          if (sparse)
            sparse_rows[row].emplace_back(landings[a], v);
          else
            dense(i, landings[a]) = v;
          a = b;
        }
      },
      opts.max_threads);

  for (const auto& err : row_errors)
    if (!err.empty())
      throw NumericError("estimate_transition_matrix: " + err);

  UlamMeta meta;
  meta.tau = tau;
  meta.n_samples = opts.n_samples;
  meta.seed = opts.seed;
  meta.substeps = opts.substeps;
  meta.estimator = "mc";
  meta.oob = opts.oob == OutOfDomainPolicy::discard_renormalize ? "discard"
                                                                : "absorb";
  meta.discard_fraction = discard;

  TransitionMatrix tm = [&] {
    if (!sparse)
      return TransitionMatrix::from_dense(std::move(dense), p, std::move(meta));
    std::vector<Eigen::Triplet<double>> trips;
    std::size_t nnz = 0;
    for (const auto& r : sparse_rows) nnz += r.size();
    trips.reserve(nnz);
    for (Index i = 0; i < n; ++i)
      for (const auto& [j, v] : sparse_rows[static_cast<std::size_t>(i)])
        trips.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
    SparseRowMatrix sm(n, n);
    sm.setFromTriplets(trips.begin(), trips.end());
    return TransitionMatrix::from_sparse(std::move(sm), p, std::move(meta));
  }();
  tm.validate_stochastic();
  return tm;
}

TransitionMatrix gaussian_kernel_matrix(const Partition& p, const MatrixXd& A,
                                        const VectorXd& shift,
                                        const MatrixXd& noise_cov,
                                        const GaussianKernelOptions& opts) {
  const int d = p.dim();
  const Index n = p.n_boxes();
  if (A.rows() != d || A.cols() != d || shift.size() != d)
    throw ConfigError("gaussian_kernel_matrix: map dimension mismatch");
  if (noise_cov.rows() != d || noise_cov.cols() != d)
    throw ConfigError("gaussian_kernel_matrix: covariance dimension mismatch");
  VectorXd sd(d);
  double max_var = 0.0, min_var = std::numeric_limits<double>::infinity();
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b)
      if (a != b && std::abs(noise_cov(a, b)) >
                        1e-14 * std::abs(noise_cov(a, a)))
        throw ConfigError(
            "gaussian_kernel_matrix: noise covariance must be diagonal");
    const double v = noise_cov(a, a);
    if (!(v > 0) || !std::isfinite(v))
      throw ConfigError("gaussian_kernel_matrix: noise variances must be positive");
    max_var = std::max(max_var, v);
    min_var = std::min(min_var, v);
    sd[a] = std::sqrt(v);
  }
  if (max_var / min_var > 1e16)
    throw NumericError("gaussian_kernel_matrix: ill-conditioned noise covariance");

  const auto [gl_x, gl_w] = gauss_legendre(opts.quad_nodes);
  const int k = opts.quad_nodes;
  const bool sparse = n > opts.dense_threshold;

  MatrixXd dense;
  if (!sparse) dense = MatrixXd::Zero(n, n);
  std::vector<std::vector<Eigen::Triplet<double>>> trip_rows;
  if (sparse) trip_rows.resize(static_cast<std::size_t>(n));
  VectorXd discard = VectorXd::Zero(n);

  // Per-axis cell edges.
  std::vector<VectorXd> edges(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) {
    VectorXd e(p.counts()[a] + 1);
    for (Index c = 0; c <= p.counts()[a]; ++c)
      e[c] = p.domain().lower[a] + static_cast<double>(c) * p.width(a);
    edges[static_cast<std::size_t>(a)] = e;
  }

  parallel_for(static_cast<std::size_t>(n), [&](std::size_t row) {
    const Index i = static_cast<Index>(row);
    auto [lo, hi] = p.box_bounds(i);
    VectorXd acc = VectorXd::Zero(n);
    double in_mass = 0.0;
    std::vector<int> node(static_cast<std::size_t>(d), 0);
    const Index total_nodes =
        static_cast<Index>(std::pow(static_cast<double>(k), d));
    std::vector<VectorXd> axis_cdf(static_cast<std::size_t>(d));
    for (Index it = 0; it < total_nodes; ++it) {
      double wq = 1.0;
      VectorXd x(d);
      for (int a = 0; a < d; ++a) {
        const int na = node[static_cast<std::size_t>(a)];
        x[a] = 0.5 * (lo[a] + hi[a]) +
               0.5 * (hi[a] - lo[a]) * gl_x[static_cast<std::size_t>(na)];
        wq *= 0.5 * gl_w[static_cast<std::size_t>(na)];
      }
      const VectorXd mean = A * x + shift;
      double node_in = 1.0;
      for (int a = 0; a < d; ++a) {
        const VectorXd& e = edges[static_cast<std::size_t>(a)];
        VectorXd c(p.counts()[a]);
        const double first = normal_cdf(e[0], mean[a], sd[a] * sd[a]);
        double prev = first;
        for (Index cell = 0; cell < p.counts()[a]; ++cell) {
          const double next = normal_cdf(e[cell + 1], mean[a], sd[a] * sd[a]);
          c[cell] = std::max(next - prev, 0.0);
          prev = next;
        }
        node_in *= prev - first;
        axis_cdf[static_cast<std::size_t>(a)] = c;
      }
      in_mass += wq * node_in;
      // Tensor product of per-axis cell probabilities into the flat row.
      std::vector<Index> cell(static_cast<std::size_t>(d), 0);
      for (Index j = 0; j < n; ++j) {
        double prob = wq;
        for (int a = 0; a < d; ++a)
          prob *= axis_cdf[static_cast<std::size_t>(a)]
                          [cell[static_cast<std::size_t>(a)]];
        acc[j] += prob;
        for (int a = d - 1; a >= 0; --a) {
          if (++cell[static_cast<std::size_t>(a)] < p.counts()[a]) break;
          cell[static_cast<std::size_t>(a)] = 0;
        }
      }
      for (int a = d - 1; a >= 0; --a) {
        if (++node[static_cast<std::size_t>(a)] < k) break;
        node[static_cast<std::size_t>(a)] = 0;
      }
    }
    discard[i] = std::max(1.0 - in_mass, 0.0);
    const double row_sum = acc.sum();
    if (!(row_sum > 0))
      throw NumericError("gaussian_kernel_matrix: box " + std::to_string(i) +
                         " maps entirely outside the domain");
    acc /= row_sum;
    if (sparse) {
      for (Index j = 0; j < n; ++j)
        if (acc[j] > opts.prune_below)
          trip_rows[row].emplace_back(static_cast<int>(i),
                                      static_cast<int>(j), acc[j]);
    } else {
      dense.row(i) = acc.transpose();
    }
  });

  UlamMeta meta;
  meta.tau = opts.tau;
  meta.n_samples = 0;
  meta.seed = 0;
  meta.substeps = 0;
  meta.estimator = "quadrature";
  meta.discard_fraction = discard;

  if (!sparse) {
    auto tm = TransitionMatrix::from_dense(std::move(dense), p, std::move(meta));
    tm.validate_stochastic();
    return tm;
  }
  std::vector<Eigen::Triplet<double>> trips;
  for (auto& r : trip_rows)
    trips.insert(trips.end(), r.begin(), r.end());
  SparseRowMatrix sm(n, n);
  sm.setFromTriplets(trips.begin(), trips.end());
  // renormalize after pruning
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (SparseRowMatrix::InnerIterator it(sm, i); it; ++it) s += it.value();
    for (SparseRowMatrix::InnerIterator it(sm, i); it; ++it)
      it.valueRef() /= s;
  }
  auto tm = TransitionMatrix::from_sparse(std::move(sm), p, std::move(meta));
  tm.validate_stochastic();
  return tm;
}

std::vector<McConvergenceRow> mc_convergence_check(
    const Partition& p, const SdeModel& m, double tau,
    std::vector<int> sample_sizes, const UlamOptions& base,
    const TransitionMatrix* reference) {
  if (sample_sizes.empty())
    throw ConfigError("mc_convergence_check: empty sample size list");
  const int n_max = *std::max_element(sample_sizes.begin(), sample_sizes.end());

  std::optional<TransitionMatrix> own_ref;
  if (!reference) {
    UlamOptions o = base;
    o.n_samples = n_max;
    own_ref.emplace(estimate_transition_matrix(p, m, tau, o));
    reference = &*own_ref;
  }

  auto max_dev = [&](const TransitionMatrix& a, const TransitionMatrix& b) {
    double dev = 0.0;
    for (Index i = 0; i < a.n(); ++i)
      for (Index j = 0; j < a.n(); ++j)
        dev = std::max(dev, std::abs(a.entry(i, j) - b.entry(i, j)));
    return dev;
  };

  std::vector<McConvergenceRow> table;
  for (int ns : sample_sizes) {
    if (own_ref && ns == n_max) {
      table.push_back({ns, 0.0});  // self-comparison against the reference
      continue;
    }
    UlamOptions o = base;
    o.n_samples = ns;
    const TransitionMatrix tm = estimate_transition_matrix(p, m, tau, o);
    table.push_back({ns, max_dev(tm, *reference)});
  }
  return table;
}

namespace {

constexpr char kMagic[4] = {'P', 'F', 'O', 'M'};

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw ConfigError("matrix file: truncated payload");
}

}  // namespace

void save_matrix(const TransitionMatrix& tm, const std::string& path) {
  nlohmann::json h;
  h["version"] = 1;
  h["n"] = tm.n();
  h["storage"] = tm.is_sparse() ? "csr" : "dense";
  h["partition"] = tm.partition().to_json();
  h["tau"] = tm.meta().tau;
  h["n_samples"] = tm.meta().n_samples;
  h["seed"] = tm.meta().seed;
  h["substeps"] = tm.meta().substeps;
  h["estimator"] = tm.meta().estimator;
  h["oob"] = tm.meta().oob;
  h["discard_fractions"] = std::vector<double>(
      tm.meta().discard_fraction.begin(), tm.meta().discard_fraction.end());
  if (tm.is_sparse())
    h["nnz"] = static_cast<std::int64_t>(tm.sparse_entries().nonZeros());
  const std::string header = h.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("save_matrix: cannot open " + path);
  out.write(kMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  write_raw(out, &len, 1);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const Index n = tm.n();
  if (!tm.is_sparse()) {
    for (Index i = 0; i < n; ++i) {
      const RowVectorXd row = tm.dense_entries().row(i);
      write_raw(out, row.data(), static_cast<std::size_t>(n));
    }
  } else {
    const SparseRowMatrix& s = tm.sparse_entries();
    std::vector<std::int64_t> outer(s.outerIndexPtr(),
                                    s.outerIndexPtr() + n + 1);
    std::vector<std::int64_t> inner(s.innerIndexPtr(),
                                    s.innerIndexPtr() + s.nonZeros());
    write_raw(out, outer.data(), outer.size());
    write_raw(out, inner.data(), inner.size());
    write_raw(out, s.valuePtr(), static_cast<std::size_t>(s.nonZeros()));
  }
  if (!out) throw NumericError("save_matrix: write failed for " + path);
}

TransitionMatrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("load_matrix: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("load_matrix: " + path + " is not a matrix file");
  std::uint32_t len = 0;
  read_raw(in, &len, 1);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("load_matrix: truncated header");
  const nlohmann::json h = nlohmann::json::parse(header);
  if (h.at("version").get<int>() != 1)
    throw ConfigError("load_matrix: unsupported file version");

  Partition p = Partition::from_json(h.at("partition"));
  const Index n = h.at("n").get<Index>();
  if (n != p.n_boxes())
    throw ConfigError("load_matrix: header size " + std::to_string(n) +
                      " disagrees with partition size " +
                      std::to_string(p.n_boxes()));
  UlamMeta meta;
  meta.tau = h.at("tau").get<double>();
  meta.n_samples = h.at("n_samples").get<int>();
  meta.seed = h.at("seed").get<std::uint64_t>();
  meta.substeps = h.at("substeps").get<int>();
  meta.estimator = h.at("estimator").get<std::string>();
  meta.oob = h.value("oob", "discard");
  const auto df = h.at("discard_fractions").get<std::vector<double>>();
  meta.discard_fraction =
      Eigen::Map<const VectorXd>(df.data(), static_cast<Index>(df.size()));

  const std::string storage = h.at("storage").get<std::string>();
  if (storage == "dense") {
    MatrixXd entries(n, n);
    RowVectorXd row(n);
    for (Index i = 0; i < n; ++i) {
      read_raw(in, row.data(), static_cast<std::size_t>(n));
      entries.row(i) = row;
    }
    return TransitionMatrix::from_dense(std::move(entries), std::move(p),
                                        std::move(meta));
  }
  if (storage != "csr") throw ConfigError("load_matrix: unknown storage kind");
  const std::int64_t nnz = h.at("nnz").get<std::int64_t>();
  std::vector<std::int64_t> outer(static_cast<std::size_t>(n) + 1);
  std::vector<std::int64_t> inner(static_cast<std::size_t>(nnz));
  std::vector<double> vals(static_cast<std::size_t>(nnz));
  read_raw(in, outer.data(), outer.size());
  read_raw(in, inner.data(), inner.size());
  read_raw(in, vals.data(), vals.size());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(nnz));
  for (Index i = 0; i < n; ++i)
    for (std::int64_t k = outer[static_cast<std::size_t>(i)];
         k < outer[static_cast<std::size_t>(i) + 1]; ++k)
      trips.emplace_back(static_cast<int>(i),
                         static_cast<int>(inner[static_cast<std::size_t>(k)]),
                         vals[static_cast<std::size_t>(k)]);
  SparseRowMatrix sm(n, n);
  sm.setFromTriplets(trips.begin(), trips.end());
  return TransitionMatrix::from_sparse(std::move(sm), std::move(p),
                                       std::move(meta));
}

void check_partition_match(const TransitionMatrix& tm, const Partition& p) {
  if (tm.n() != p.n_boxes())
    throw ConfigError("matrix was built for N=" + std::to_string(tm.n()) +
                      " boxes but the partition has N=" +
                      std::to_string(p.n_boxes()));
  if (!tm.partition().same_layout(p))
    throw ConfigError(
        "matrix partition layout (bounds/counts) differs from the supplied "
        "partition");
}

}  // namespace tfilter
