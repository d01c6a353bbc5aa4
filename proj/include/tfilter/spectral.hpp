#ifndef TFILTER_SPECTRAL_HPP
#define TFILTER_SPECTRAL_HPP

#include <complex>
#include <string>
#include <vector>

#include "tfilter/filter.hpp"
#include "tfilter/ulam.hpp"

namespace tfilter {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

/// Left eigendecomposition of a transition matrix, sorted by descending
/// eigenvalue magnitude. Rows of Xi are the left eigenvectors; Xi P = L Xi.
/// Conjugate pairs are kept adjacent (positive imaginary part first) so that
/// truncated expansions of real densities stay real.
struct SpectralModel {
  VectorXcd eigenvalues;
  MatrixXcd Xi;
  MatrixXcd Xi_inv;
  std::vector<bool> pair_start;  // mode i opens a conjugate pair {i, i+1}
  double condition_number = 0.0;
  double tau = 0.0;  // assimilation step of the source matrix

  Index n() const { return eigenvalues.size(); }

  /// Smallest rank >= r that does not split a conjugate pair.
  Index effective_rank(Index r) const;
};

/// Full left eigendecomposition. Fails when the eigenvector matrix condition
/// number exceeds cond_threshold (defective or near-defective input).
SpectralModel eigendecompose(const TransitionMatrix& tm,
                             double cond_threshold = 1e12);

struct StationaryDistribution {
  VectorXd pi;  // nonnegative, sums to 1, pi P = pi
};

/// Left fixed vector of an irreducible chain. Reducible chains are rejected
/// with the strongly-connected component decomposition in the message.
StationaryDistribution stationary(const TransitionMatrix& tm);

struct SymmetrizeResult {
  MatrixXd S;            // diag(sqrt(pi)) P diag(1/sqrt(pi))
  SpectralModel model;   // real spectral basis psi_j = diag(sqrt(pi)) w_j
};

/// Detailed-balance symmetrization. Refuses (pointing at the complex path)
/// when max_ij |pi_i P_ij - pi_j P_ji| exceeds balance_tol.
SymmetrizeResult symmetrize(const TransitionMatrix& tm,
                            const StationaryDistribution& pi,
                            double balance_tol = 1e-8);

/// Truncated spectral prediction: w_hat = sum_{i<r} lambda_i (w Xi^-1)_i xi_i,
/// using only the leading r columns of Xi^-1 and rows of Xi. Negative
/// coefficients produced by the truncation are clamped to zero; the removed
/// mass is reported through clamped_mass when given.
WeightVector lr_predict(const WeightVector& w, const SpectralModel& sm,
                        Index r, double* clamped_mass = nullptr);

/// j-step truncated prediction in one shot,
/// rho_j = sum_{i<r} lambda_i^j (w Xi^-1)_i xi_i: the expansion coefficients
/// evolve under the eigenvalue powers without re-expanding intermediate
/// iterates.
WeightVector lr_predict_power(const WeightVector& w, const SpectralModel& sm,
                              Index r, int steps,
                              double* clamped_mass = nullptr);

/// Low-rank filter: alternates lr_predict and likelihood reweighting.
FilterTrace lr_pfof_run(const SpectralModel& sm, const WeightVector& w0,
                        const std::vector<VectorXd>& observations,
                        const DiscreteObservationModel& obs, const Partition& p,
                        Index r, double t0 = 0.0,
                        const LikelihoodOptions& lopts = {});

/// Spectral payload saved next to a matrix file; round-trips bit-exactly.
void save_spectral(const SpectralModel& sm, const Partition& p,
                   const std::string& path);
SpectralModel load_spectral(const std::string& path, Partition* partition_out = nullptr);

}  // namespace tfilter

#endif
