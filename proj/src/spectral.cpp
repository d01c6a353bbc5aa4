#include "tfilter/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace tfilter {

Index SpectralModel::effective_rank(Index r) const {
  if (r < 1 || r > n())
    throw ConfigError("truncation rank " + std::to_string(r) +
                      " outside [1, " + std::to_string(n()) + "]");
  if (r < n() && pair_start[static_cast<std::size_t>(r - 1)]) return r + 1;
  return r;
}

namespace {

// Strongly connected components of the nonzero pattern (iterative Tarjan).
// Returns component sizes; one component means irreducible.
std::vector<Index> scc_sizes(const TransitionMatrix& tm, double tol = 1e-15) {
  const Index n = tm.n();
  auto neighbors = [&](Index i, std::vector<Index>& out) {
    out.clear();
    if (tm.is_sparse()) {
      for (SparseRowMatrix::InnerIterator it(tm.sparse_entries(), i); it; ++it)
        if (it.value() > tol) out.push_back(it.col());
    } else {
      for (Index j = 0; j < n; ++j)
        if (tm.dense_entries()(i, j) > tol) out.push_back(j);
    }
  };

  std::vector<Index> index(static_cast<std::size_t>(n), -1),
      low(static_cast<std::size_t>(n), 0);
  std::vector<bool> on_stack(static_cast<std::size_t>(n), false);
  std::vector<Index> stack, sizes;
  Index counter = 0;

  struct Frame {
    Index v;
    std::vector<Index> adj;
    std::size_t next = 0;
  };
  std::vector<Frame> call;
  std::vector<Index> scratch;

  for (Index root = 0; root < n; ++root) {
    if (index[static_cast<std::size_t>(root)] != -1) continue;
    call.push_back({root, {}, 0});
    neighbors(root, call.back().adj);
    index[static_cast<std::size_t>(root)] =
        low[static_cast<std::size_t>(root)] = counter++;
    stack.push_back(root);
    on_stack[static_cast<std::size_t>(root)] = true;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.next < f.adj.size()) {
        const Index w = f.adj[f.next++];
        if (index[static_cast<std::size_t>(w)] == -1) {
          call.push_back({w, {}, 0});
          neighbors(w, call.back().adj);
          index[static_cast<std::size_t>(w)] =
              low[static_cast<std::size_t>(w)] = counter++;
          stack.push_back(w);
          on_stack[static_cast<std::size_t>(w)] = true;
        } else if (on_stack[static_cast<std::size_t>(w)]) {
          low[static_cast<std::size_t>(f.v)] =
              std::min(low[static_cast<std::size_t>(f.v)],
                       index[static_cast<std::size_t>(w)]);
        }
      } else {
        if (low[static_cast<std::size_t>(f.v)] ==
            index[static_cast<std::size_t>(f.v)]) {
          Index size = 0;
          Index w;
          do {
            w = stack.back();
            stack.pop_back();
            on_stack[static_cast<std::size_t>(w)] = false;
            ++size;
          } while (w != f.v);
          sizes.push_back(size);
        }
        const Index v = f.v;
        call.pop_back();
        if (!call.empty())
          low[static_cast<std::size_t>(call.back().v)] =
              std::min(low[static_cast<std::size_t>(call.back().v)],
                       low[static_cast<std::size_t>(v)]);
      }
    }
  }
  return sizes;
}

void sort_modes(VectorXcd& lambda, MatrixXcd& Xi) {
  const Index n = lambda.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ma = std::abs(lambda[a]), mb = std::abs(lambda[b]);
    if (std::abs(ma - mb) > 1e-14 * std::max(1.0, ma)) return ma > mb;
    if (std::abs(lambda[a].real() - lambda[b].real()) > 1e-14)
      return lambda[a].real() > lambda[b].real();
    return a < b;
  });
  VectorXcd l2(n);
  MatrixXcd x2(n, n);
  for (Index i = 0; i < n; ++i) {
    l2[i] = lambda[order[static_cast<std::size_t>(i)]];
    x2.row(i) = Xi.row(order[static_cast<std::size_t>(i)]);
  }
  lambda = std::move(l2);
  Xi = std::move(x2);
}

// Marks conjugate pairs and enforces (positive imag, negative imag) order.
std::vector<bool> mark_pairs(VectorXcd& lambda, MatrixXcd& Xi) {
  const Index n = lambda.size();
  std::vector<bool> pair_start(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n; ++i) {
    const double im = lambda[i].imag();
    if (std::abs(im) <= 1e-14 * std::max(1.0, std::abs(lambda[i]))) continue;
    if (i + 1 >= n)
      throw NumericError("eigendecompose: unpaired complex eigenvalue");
    // find the conjugate partner (adjacent after sorting, but search anyway)
    Index partner = -1;
    for (Index j = i + 1; j < n; ++j) {
      if (std::abs(lambda[j] - std::conj(lambda[i])) <=
          1e-10 * std::max(1.0, std::abs(lambda[i]))) {
        partner = j;
        break;
      }
    }
    if (partner == -1)
      throw NumericError("eigendecompose: unpaired complex eigenvalue");
    if (partner != i + 1) {
      std::swap(lambda[partner], lambda[i + 1]);
      Xi.row(partner).swap(Xi.row(i + 1));
    }
    if (lambda[i].imag() < 0) {
      std::swap(lambda[i], lambda[i + 1]);
      Xi.row(i).swap(Xi.row(i + 1));
    }
    pair_start[static_cast<std::size_t>(i)] = true;
    ++i;  // skip the partner
  }
  return pair_start;
}

void check_spectral_invariants(const SpectralModel& sm, const MatrixXd& P) {
  const double lead = std::abs(sm.eigenvalues[0]);
  if (std::abs(lead - 1.0) > 1e-6)
    throw NumericError("eigendecompose: leading eigenvalue magnitude " +
                       std::to_string(lead) + " is not 1");
  double worst = 0.0;
  for (Index i = 0; i < sm.n(); ++i) {
    const Eigen::RowVectorXcd r =
        sm.Xi.row(i) * P - sm.eigenvalues[i] * sm.Xi.row(i);
    worst = std::max(worst, r.norm() / sm.Xi.row(i).norm());
  }
  if (worst > 1e-8)
    throw NumericError("eigendecompose: eigen-residual " +
                       std::to_string(worst) + " exceeds 1e-8");
}

}  // namespace

SpectralModel eigendecompose(const TransitionMatrix& tm,
                             double cond_threshold) {
  if (tm.is_sparse())
    throw ConfigError(
        "eigendecompose: full decomposition needs dense storage (desk-scale "
        "matrices only)");
  const MatrixXd& P = tm.dense_entries();

  Eigen::EigenSolver<MatrixXd> solver(P.transpose());
  if (solver.info() != Eigen::Success)
    throw NumericError("eigendecompose: eigensolver failed to converge");

  SpectralModel sm;
  sm.eigenvalues = solver.eigenvalues();
  sm.Xi = solver.eigenvectors().transpose();  // rows are left eigenvectors
  sm.tau = tm.meta().tau;
  sort_modes(sm.eigenvalues, sm.Xi);
  sm.pair_start = mark_pairs(sm.eigenvalues, sm.Xi);

  Eigen::PartialPivLU<MatrixXcd> lu(sm.Xi);
  const double rcond = lu.rcond();
  sm.condition_number = rcond > 0 ? 1.0 / rcond
                                  : std::numeric_limits<double>::infinity();
  if (sm.condition_number > cond_threshold)
    throw NumericError(
        "eigendecompose: eigenvector matrix is near-defective (condition "
        "estimate " +
        std::to_string(sm.condition_number) + ")");
  sm.Xi_inv = lu.inverse();

  check_spectral_invariants(sm, P);
  return sm;
}

StationaryDistribution stationary(const TransitionMatrix& tm) {
  const auto sizes = scc_sizes(tm);
  if (sizes.size() != 1) {
    std::string msg = "stationary: chain is reducible (" +
                      std::to_string(sizes.size()) + " components of sizes";
    for (std::size_t k = 0; k < std::min<std::size_t>(sizes.size(), 8); ++k)
      msg += " " + std::to_string(sizes[k]);
    if (sizes.size() > 8) msg += " ...";
    throw NumericError(msg + ")");
  }

  const Index n = tm.n();
  VectorXd pi;
  if (!tm.is_sparse() && n <= 2000) {
    Eigen::EigenSolver<MatrixXd> solver(tm.dense_entries().transpose());
    if (solver.info() != Eigen::Success)
      throw NumericError("stationary: eigensolver failed");
    Index best = 0;
    double best_dist = std::abs(solver.eigenvalues()[0] - 1.0);
    for (Index i = 1; i < n; ++i) {
      const double d = std::abs(solver.eigenvalues()[i] - 1.0);
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    VectorXd v = solver.eigenvectors().col(best).real();
    if (v.sum() < 0) v = -v;
    pi = v.cwiseMax(0.0);
  } else {
    // damped power iteration; damping removes periodic oscillation
    RowVectorXd w = RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < 200000; ++it) {
      RowVectorXd next = 0.5 * (w + tm.apply_left(w));
      next /= next.sum();
      const double delta = (next - w).cwiseAbs().sum();
      w = next;
      if (delta < 1e-13) break;
    }
    pi = w.transpose();
  }
  pi /= pi.sum();
  const VectorXd residual =
      tm.apply_left(pi.transpose()).transpose() - pi;
  if (residual.cwiseAbs().maxCoeff() > 1e-8)
    throw NumericError("stationary: fixed-vector residual " +
                       std::to_string(residual.cwiseAbs().maxCoeff()));
  return {pi};
}

SymmetrizeResult symmetrize(const TransitionMatrix& tm,
                            const StationaryDistribution& pi,
                            double balance_tol) {
  if (tm.is_sparse())
    throw ConfigError("symmetrize: dense storage required");
  const Index n = tm.n();
  if (pi.pi.size() != n) throw ConfigError("symmetrize: pi length mismatch");
  if ((pi.pi.array() <= 0).any())
    throw NumericError(
        "symmetrize: stationary distribution must be strictly positive");
  const MatrixXd& P = tm.dense_entries();

  double worst = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      worst = std::max(worst,
                       std::abs(pi.pi[i] * P(i, j) - pi.pi[j] * P(j, i)));
  if (worst > balance_tol)
    throw NumericError(
        "symmetrize: detailed balance violated (max asymmetry " +
        std::to_string(worst) +
        "); use the complex eigendecomposition path instead");

  const VectorXd root = pi.pi.cwiseSqrt();
  MatrixXd S(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) S(i, j) = root[i] * P(i, j) / root[j];
  // the accepted balance tolerance bounds the transformed asymmetry by
  // balance_tol / min_ij sqrt(pi_i pi_j); anything beyond that is a bug
  const double implied =
      std::max(1e-9, balance_tol / std::max(pi.pi.minCoeff(), 1e-300));
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > implied)
    throw NumericError("symmetrize: transformed matrix is not symmetric");
  S = 0.5 * (S + S.transpose());

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(S);
  if (solver.info() != Eigen::Success)
    throw NumericError("symmetrize: symmetric eigensolver failed");

  // resort descending by |alpha|
  VectorXcd lambda(n);
  MatrixXcd Xi(n, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ma = std::abs(solver.eigenvalues()[a]);
    const double mb = std::abs(solver.eigenvalues()[b]);
    if (std::abs(ma - mb) > 1e-14) return ma > mb;
    return solver.eigenvalues()[a] > solver.eigenvalues()[b];
  });
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    lambda[k] = solver.eigenvalues()[src];
    Xi.row(k) =
        (root.asDiagonal() * solver.eigenvectors().col(src)).transpose();
  }

  SymmetrizeResult out;
  out.S = std::move(S);
  out.model.eigenvalues = std::move(lambda);
  out.model.Xi = std::move(Xi);
  // Xi = W^T D with W orthogonal, so Xi^-1 = D^-1 W
  MatrixXcd inv(n, n);
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    inv.col(k) = (solver.eigenvectors().col(src).cwiseQuotient(root));
  }
  out.model.Xi_inv = std::move(inv);
  out.model.pair_start.assign(static_cast<std::size_t>(n), false);
  out.model.condition_number = root.maxCoeff() / root.minCoeff();
  out.model.tau = tm.meta().tau;
  return out;
}

namespace {

WeightVector lr_reconstruct(const WeightVector& w, const SpectralModel& sm,
                            Index r, int steps, double* clamped_mass);

}  // namespace

WeightVector lr_predict(const WeightVector& w, const SpectralModel& sm,
                        Index r, double* clamped_mass) {
  return lr_reconstruct(w, sm, r, 1, clamped_mass);
}

WeightVector lr_predict_power(const WeightVector& w, const SpectralModel& sm,
                              Index r, int steps, double* clamped_mass) {
  if (steps < 1) throw ConfigError("lr_predict_power: steps must be >= 1");
  return lr_reconstruct(w, sm, r, steps, clamped_mass);
}

namespace {

WeightVector lr_reconstruct(const WeightVector& w, const SpectralModel& sm,
                            Index r, int steps, double* clamped_mass) {
  if (w.w.size() != sm.n())
    throw ConfigError("lr_predict: weight length does not match model size");
  const Index re = sm.effective_rank(r);

  const Eigen::RowVectorXcd wc = w.w.transpose().cast<std::complex<double>>();
  const Eigen::RowVectorXcd v = wc * sm.Xi_inv.leftCols(re);
  Eigen::RowVectorXcd scaled = v;
  for (Index i = 0; i < re; ++i)
    scaled[i] *= std::pow(sm.eigenvalues[i], steps);
  const Eigen::RowVectorXcd rec = scaled * sm.Xi.topRows(re);

  // residue bound uses the accumulated term magnitude: cancellation in
  // ill-conditioned bases inflates roundoff far above the output scale
  double amp = 1.0;
  for (Index i = 0; i < re; ++i)
    amp += std::abs(scaled[i]) * sm.Xi.row(i).cwiseAbs().maxCoeff();
  if (rec.imag().cwiseAbs().maxCoeff() > 1e-9 * amp)
    throw NumericError(
        "lr_predict: truncated expansion produced a non-real density "
        "(conjugate pair split?)");

  WeightVector out;
  out.w = rec.real().transpose();
  double clamped = 0.0;
  for (Index i = 0; i < out.w.size(); ++i)
    if (out.w[i] < 0) {
      clamped -= out.w[i];
      out.w[i] = 0.0;
    }
  if (clamped_mass) *clamped_mass = clamped;
  out.normalized = false;
  return out;
}

}  // namespace

FilterTrace lr_pfof_run(const SpectralModel& sm, const WeightVector& w0,
                        const std::vector<VectorXd>& observations,
                        const DiscreteObservationModel& obs, const Partition& p,
                        Index r, double t0, const LikelihoodOptions& lopts) {
  if (sm.n() != p.n_boxes())
    throw ConfigError("lr_pfof_run: model size does not match partition");
  validate_weights(p, w0);
  if (!w0.normalized) throw ConfigError("lr_pfof_run: w0 must be normalized");
  sm.effective_rank(r);  // validates the range

  auto normalized_copy = [&](const WeightVector& v) {
    WeightVector c = v;
    const double mass = c.w.sum() * p.box_measure();
    if (!(mass > 0)) throw NumericError("lr_pfof_run: prior mass vanished");
    c.w /= mass;
    c.normalized = true;
    return c;
  };

  FilterTrace trace;
  {
    FilterStep s0;
    s0.j = 0;
    s0.t = t0;
    s0.prior = w0;
    s0.posterior = w0;
    const Moments mo = moments(p, w0);
    s0.mean = mo.mean;
    s0.cov = mo.cov;
    for (Index i = 0; i < w0.w.size(); ++i)
      if (w0.w[i] * p.box_measure() > 1e-12) ++s0.support;
    trace.steps.push_back(std::move(s0));
  }

  WeightVector w = w0;
  int j = 0;
  for (const VectorXd& y : observations) {
    ++j;
    double clamped = 0.0;
    WeightVector prior = lr_predict(w, sm, r, &clamped);
    const LikelihoodVector g = likelihood_vector(p, obs, y, lopts);
    w = analyze(p, prior, g);

    FilterStep s;
    s.j = j;
    s.t = t0 + j * sm.tau;
    s.prior = normalized_copy(prior);
    s.posterior = w;
    const Moments mo = moments(p, w);
    s.mean = mo.mean;
    s.cov = mo.cov;
    s.support = 0;
    for (Index i = 0; i < w.w.size(); ++i)
      if (w.w[i] * p.box_measure() > 1e-12) ++s.support;
    s.clamped_mass = clamped * p.box_measure();
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

namespace {
constexpr char kSpectralMagic[4] = {'P', 'F', 'O', 'S'};
}

void save_spectral(const SpectralModel& sm, const Partition& p,
                   const std::string& path) {
  nlohmann::json h;
  h["version"] = 1;
  h["n"] = sm.n();
  h["partition"] = p.to_json();
  h["tau"] = sm.tau;
  h["condition_number"] = sm.condition_number;
  std::vector<int> pairs(sm.pair_start.begin(), sm.pair_start.end());
  h["pair_start"] = pairs;
  const std::string header = h.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("save_spectral: cannot open " + path);
  out.write(kSpectralMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  auto write_cplx = [&](const MatrixXcd& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        const double re = m(i, j).real(), im = m(i, j).imag();
        out.write(reinterpret_cast<const char*>(&re), sizeof(double));
        out.write(reinterpret_cast<const char*>(&im), sizeof(double));
      }
  };
  write_cplx(sm.eigenvalues);
  write_cplx(sm.Xi);
  write_cplx(sm.Xi_inv);
  if (!out) throw NumericError("save_spectral: write failed");
}

SpectralModel load_spectral(const std::string& path, Partition* partition_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("load_spectral: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kSpectralMagic, 4) != 0)
    throw ConfigError("load_spectral: not a spectral file");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("load_spectral: truncated header");
  const nlohmann::json h = nlohmann::json::parse(header);

  SpectralModel sm;
  const Index n = h.at("n").get<Index>();
  sm.tau = h.at("tau").get<double>();
  sm.condition_number = h.at("condition_number").get<double>();
  const auto pairs = h.at("pair_start").get<std::vector<int>>();
  sm.pair_start.assign(pairs.begin(), pairs.end());
  if (partition_out) *partition_out = Partition::from_json(h.at("partition"));

  auto read_cplx = [&](MatrixXcd& m, Index rows, Index cols) {
    m.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) {
        double re = 0, im = 0;
        in.read(reinterpret_cast<char*>(&re), sizeof(double));
        in.read(reinterpret_cast<char*>(&im), sizeof(double));
        m(i, j) = {re, im};
      }
    if (!in) throw ConfigError("load_spectral: truncated payload");
  };
  MatrixXcd ev;
  read_cplx(ev, n, 1);
  sm.eigenvalues = ev.col(0);
  read_cplx(sm.Xi, n, n);
  read_cplx(sm.Xi_inv, n, n);
  return sm;
}

}  // namespace tfilter
