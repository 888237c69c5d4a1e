#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sae/geometry.hpp"
#include "sae/rng.hpp"

namespace sae::vario {

enum class Family { kMatern, kExponential, kSpherical };
enum class Estimator { kClassical, kRobust };

Family family_from_string(const std::string& s);
std::string to_string(Family f);

/// Parametric semi-variogram. Matern uses the (h / range) argument with
/// unit scale constant, i.e. range is the inverse decay rate 1/phi; the
/// convention travels with serialized models as "range-over-h, c=1".
struct VariogramModel {
  Family family = Family::kMatern;
  double nugget = 0.0;
  double partial_sill = 1.0;
  double range = 1.0;
  double smoothness = 0.5;  // Matern only

  double sill() const { return nugget + partial_sill; }
};

struct VariogramBin {
  double lag = 0.0;        // bin center
  double gamma = 0.0;      // estimated semivariance
  long long pair_count = 0;
};

struct EmpiricalVariogram {
  std::vector<VariogramBin> bins;  // only nonempty bins, lags increasing
  Estimator estimator = Estimator::kClassical;
  double max_lag = 0.0;
  double bin_width = 0.0;
};

struct CvCurve {
  std::vector<int> candidates;      // evaluated sizes, ascending
  std::vector<double> rmse;         // aligned with candidates
  std::vector<std::string> notes;   // skip reasons, aligned ("" if run)
  int selected = 0;
};

/// Semivariance at lag h >= 0; gamma(0) = 0 for every model.
double gamma_at(double h, const VariogramModel& model);

/// Matheron (classical) or Cressie-Hawkins fourth-root (robust) estimator
/// over equal-width distance bins on (0, max_lag].
EmpiricalVariogram empirical_variogram(const geo::Locations& locs, const Eigen::VectorXd& values,
                                       Estimator kind, double max_lag, int n_bins);

/// Ordinary least squares fit of a parametric model to binned estimates.
/// Range is profiled by a bounded one-dimensional search over multi-start
/// grid points; nugget and partial sill come from the nested nonnegative
/// linear solve. Matern smoothness is searched over {0.5, 1, 1.5, 2.5}
/// unless fixed.
VariogramModel fit_ols(const EmpiricalVariogram& emp, Family family,
                       std::optional<double> fix_smoothness = std::nullopt);

/// Sum of squared bin residuals for a candidate model.
double bin_residual(const EmpiricalVariogram& emp, const VariogramModel& model);

/// k-fold cross-validation of the local kriging neighborhood size.
/// Deterministic fold assignment from the stream; candidates larger than
/// the smallest training fold are skipped with a note.
CvCurve cv_neighborhood(const geo::Locations& locs, const Eigen::VectorXd& values,
                        const VariogramModel& model, const std::vector<int>& candidates,
                        int folds, rng::Stream& stream);

}  // namespace sae::vario
