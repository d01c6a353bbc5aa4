#ifndef TFILTER_QUADRATURE_HPP
#define TFILTER_QUADRATURE_HPP

#include <cmath>
#include <utility>
#include <vector>

namespace tfilter {

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial roots.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(
    int k) {
  std::vector<double> x(static_cast<std::size_t>(k)),
      w(static_cast<std::size_t>(k));
  const int m = (k + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (k + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < k; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = k * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[static_cast<std::size_t>(i)] = -z;
    x[static_cast<std::size_t>(k - 1 - i)] = z;
    w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[static_cast<std::size_t>(k - 1 - i)] = w[static_cast<std::size_t>(i)];
  }
  return {x, w};
}

}  // namespace tfilter

#endif
