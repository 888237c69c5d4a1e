#pragma once

#include <Eigen/Dense>
#include <functional>

namespace sae::opt {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead with box clamping. `f` must be finite inside the box.
/// Converges when the simplex value spread drops below `tol`.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double tol,
                             int max_evals);

}  // namespace sae::opt
