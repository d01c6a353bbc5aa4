#ifndef TFILTER_ULAM_HPP
#define TFILTER_ULAM_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCore>
#include <json.hpp>

#include "tfilter/partition.hpp"
#include "tfilter/sde.hpp"

namespace tfilter {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// What happens to flow samples that land outside the domain.
enum class OutOfDomainPolicy { discard_renormalize, absorb_boundary };

/// How start points are placed inside each source box.
enum class StartPointKind { uniform, stratified };

struct UlamOptions {
  int n_samples = 100;
  int substeps = 1;
  std::uint64_t seed = 0;
  OutOfDomainPolicy oob = OutOfDomainPolicy::discard_renormalize;
  StartPointKind start_points = StartPointKind::uniform;
  Index dense_threshold = 2000;  // boxes above this use CSR storage
  unsigned max_threads = 0;      // 0 = hardware concurrency
};

struct UlamMeta {
  double tau = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  int substeps = 0;
  std::string estimator;       // "mc" or "quadrature"
  std::string oob = "discard";
  VectorXd discard_fraction;   // per-row out-of-domain fraction
};

/// Row-stochastic discretization of the Perron-Frobenius operator over one
/// assimilation step. Dense below the storage threshold, CSR above it.
class TransitionMatrix {
public:
  static TransitionMatrix from_dense(MatrixXd entries, Partition partition,
                                     UlamMeta meta);
  static TransitionMatrix from_sparse(SparseRowMatrix entries,
                                      Partition partition, UlamMeta meta);

  Index n() const { return n_; }
  bool is_sparse() const { return sparse_storage_; }
  const Partition& partition() const { return partition_; }
  const UlamMeta& meta() const { return meta_; }

  double entry(Index i, Index j) const {
    return sparse_storage_ ? csr_.coeff(i, j) : dense_(i, j);
  }
  const MatrixXd& dense_entries() const;
  const SparseRowMatrix& sparse_entries() const;

  /// Row-vector transport w -> w P.
  RowVectorXd apply_left(const RowVectorXd& w) const;

  VectorXd row_sums() const;

  /// Enforces entries in [0,1] and unit row sums within tol.
  void validate_stochastic(double tol = 1e-9) const;

  /// Magnitude of the leading eigenvalue, estimated by normalized power
  /// iteration on the left action (works for dense and CSR storage).
  double leading_eigenvalue_magnitude(int iterations = 200) const;

private:
  TransitionMatrix(Partition partition, UlamMeta meta)
      : partition_(std::move(partition)), meta_(std::move(meta)) {}

  Index n_ = 0;
  bool sparse_storage_ = false;
  MatrixXd dense_;
  SparseRowMatrix csr_;
  Partition partition_;
  UlamMeta meta_;
};

/// Per-entry Monte-Carlo standard error sqrt(p (1-p) / n_eff) where n_eff is
/// the row's in-domain landing count; zero for quadrature-built matrices.
double entry_std_error(const TransitionMatrix& tm, Index i, Index j);

/// Diagnostics view over a finished matrix.
struct UlamDiagnostics {
  VectorXd discard_fraction;
  VectorXd effective_samples;  // in-domain landings per row (mc only)
};
UlamDiagnostics diagnostics(const TransitionMatrix& tm);

/// Monte-Carlo Ulam estimate: n_samples start points per box pushed through
/// the time-tau flow; rows are landing frequencies renormalized over
/// in-domain landings (or absorbed into the boundary, per options).
TransitionMatrix estimate_transition_matrix(const Partition& p,
                                            const SdeModel& m, double tau,
                                            const UlamOptions& opts);

struct GaussianKernelOptions {
  int quad_nodes = 16;           // Gauss-Legendre nodes per axis per box
  Index dense_threshold = 2000;
  double prune_below = 0.0;      // drop entries below this before renormalizing
  double tau = 0.0;              // assimilation step recorded in the metadata
};

/// Quadrature-exact Ulam matrix for the linear-Gaussian kernel
/// x' = A x + shift + xi, xi ~ N(0, noise_cov) with diagonal noise_cov:
/// P_ij = (1/mu(B_i)) \int_{B_i} Pr(A x + shift + xi in B_j) dx.
/// Isolates the projection error from Monte-Carlo noise.
TransitionMatrix gaussian_kernel_matrix(const Partition& p, const MatrixXd& A,
                                        const VectorXd& shift,
                                        const MatrixXd& noise_cov,
                                        const GaussianKernelOptions& opts = {});

struct McConvergenceRow {
  int n_samples;
  double max_abs_deviation;  // ||P_n - P_ref||_max
};

/// Max-entry deviation of Monte-Carlo estimates from a reference matrix for
/// each sample size. When no reference is supplied the largest sample size in
/// the list is estimated first and used as the reference.
std::vector<McConvergenceRow> mc_convergence_check(
    const Partition& p, const SdeModel& m, double tau,
    std::vector<int> sample_sizes, const UlamOptions& base,
    const TransitionMatrix* reference = nullptr);

/// Binary matrix file: magic + JSON header + raw payload; round-trips
/// bit-exactly.
void save_matrix(const TransitionMatrix& tm, const std::string& path);
TransitionMatrix load_matrix(const std::string& path);

/// Fails with a diagnostic naming both layouts when the matrix was built on a
/// different partition.
void check_partition_match(const TransitionMatrix& tm, const Partition& p);

}  // namespace tfilter

#endif
