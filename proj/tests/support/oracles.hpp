#pragma once

// Test-only oracles, deliberately independent of the library code paths they
// check: hand-rolled linear algebra, alternative geometry predicates, and
// closed forms.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sae/geometry.hpp"
#include "sae/variogram.hpp"

namespace oracles {

/// Gauss-Jordan solve with partial pivoting on plain vectors (no Eigen
/// decompositions involved).
inline std::vector<double> gauss_jordan(std::vector<std::vector<double>> a,
                                        std::vector<double> b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-14) throw std::runtime_error("oracle: singular system");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    const double d = a[col][col];
    for (std::size_t c = 0; c < n; ++c) a[col][c] /= d;
    b[col] /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  return b;
}

/// Full ordinary kriging system over ALL points, assembled from gamma_at and
/// solved by the Gauss-Jordan routine above. Returns (weights..., lagrange).
inline std::vector<double> dense_ok_solve(const sae::geo::Locations& locs,
                                          const sae::vario::VariogramModel& model,
                                          const Eigen::VectorXd& rhs_gamma) {
  const std::size_t n = static_cast<std::size_t>(locs.rows());
  std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 0.0));
  std::vector<double> b(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      a[i][j] = sae::vario::gamma_at(
          (locs.row(static_cast<Eigen::Index>(i)) - locs.row(static_cast<Eigen::Index>(j))).norm(),
          model);
    }
    a[i][n] = a[n][i] = 1.0;
    b[i] = rhs_gamma[static_cast<Eigen::Index>(i)];
  }
  b[n] = 1.0;
  return gauss_jordan(a, b);
}

/// Winding-number point-in-polygon (different algorithm family from the
/// library's even-odd crossing test).
inline bool winding_inside(const sae::geo::Point& p, const sae::geo::Ring& ring) {
  int wn = 0;
  const std::size_t n = ring.size();
  const auto is_left = [](const sae::geo::Point& a, const sae::geo::Point& b,
                          const sae::geo::Point& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  };
  for (std::size_t i = 0; i < n; ++i) {
    const sae::geo::Point& a = ring[i];
    const sae::geo::Point& b = ring[(i + 1) % n];
    if (a.y() <= p.y()) {
      if (b.y() > p.y() && is_left(a, b, p) > 0) ++wn;
    } else {
      if (b.y() <= p.y() && is_left(a, b, p) < 0) --wn;
    }
  }
  return wn != 0;
}

/// Brute-force shared-edge adjacency for axis-aligned unit squares: compare
/// bounding boxes and require a shared side of positive length.
inline bool squares_share_edge(double ax, double ay, double bx, double by, double size) {
  const double dx = std::abs(ax - bx), dy = std::abs(ay - by);
  return (dx == size && dy == 0.0) || (dx == 0.0 && dy == size);
}

/// Classical Fay-Herriot shrinkage predictor (independent effects).
inline double fh_shrinkage(double y_i, double synth_i, double sigma2_v, double v_eps_i) {
  const double g = sigma2_v / (sigma2_v + v_eps_i);
  return g * y_i + (1.0 - g) * synth_i;
}

/// Restricted log-likelihood evaluated with explicit determinants and
/// inverses (no Cholesky path shared with the implementation).
inline double dense_restricted_loglik(double sigma2_v, double rho, const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                                      const Eigen::MatrixXd* W) {
  const Eigen::Index m = y.size();
  Eigen::MatrixXd G;
  if (W == nullptr) {
    G = sigma2_v * Eigen::MatrixXd::Identity(m, m);
  } else {
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(m, m) - rho * (*W);
    G = sigma2_v * (M * M.transpose()).inverse();
  }
  Eigen::MatrixXd V = G;
  V.diagonal() += v_eps;
  const Eigen::MatrixXd Vi = V.inverse();
  const Eigen::MatrixXd XtViX = X.transpose() * Vi * X;
  const Eigen::VectorXd beta = XtViX.inverse() * X.transpose() * Vi * y;
  const Eigen::VectorXd r = y - X * beta;
  return -0.5 * (std::log(V.determinant()) + std::log(XtViX.determinant()) +
                 r.dot(Vi * r));
}

}  // namespace oracles
