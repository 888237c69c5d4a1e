#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sae/geometry.hpp"

namespace sae::sfh {

enum class RandomEffect { kIndependent, kSar };

RandomEffect random_effect_from_string(const std::string& s);
std::string to_string(RandomEffect re);

struct ModelSpec {
  std::vector<std::string> covariates;  // raw column names, standardized in the design
  RandomEffect random_effect = RandomEffect::kSar;
  bool intercept = true;
};

/// Standardization learned on the modeled areas; bootstrap replicates reuse
/// it verbatim so replicate coefficients stay on the original scale.
struct Scaler {
  std::vector<std::string> names;
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  /// Applies the stored scaling and prepends the intercept column.
  Eigen::MatrixXd design(const Eigen::MatrixXd& raw_columns, bool intercept) const;
};

struct Design {
  Eigen::VectorXd y;       // log-scale direct estimates, modeled areas
  Eigen::MatrixXd X;       // intercept (if any) + standardized covariates
  Eigen::VectorXd v_eps;   // log-scale sampling variances
  std::vector<std::string> column_names;
  Scaler scaler;
};

struct ConvergenceReport {
  bool converged = false;
  int evaluations = 0;
  int starts = 0;
  double best_objective = 0.0;  // -2 l_R up to constants, minimized
};

struct SfhFit {
  ModelSpec spec;
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta;
  double sigma2_v = 0.0;
  double rho = 0.0;
  double loglik_restricted = 0.0;
  bool boundary_sigma2 = false;
  ConvergenceReport convergence;
  Eigen::VectorXd v_eps;
  Scaler scaler;

  // Fitted covariance pieces at the optimum (kept for prediction).
  Eigen::MatrixXd G;
  Eigen::MatrixXd V;
  Eigen::LLT<Eigen::MatrixXd> V_llt;

  double rho_min = 0.0;
  double rho_max = 0.0;

  /// GLS plug-in covariance of beta, (X' V^-1 X)^-1.
  Eigen::MatrixXd beta_cov;
};

struct AreaPrediction {
  std::string region_id;
  double eblup_log = 0.0;
  double mse_log = 0.0;
  std::string mse_source;  // "bootstrap", "naive_g1", "deferred"
  double mu_hat = 0.0;
  double tau_hat = 0.0;
  double rmse_total = 0.0;
};

/// Builds (y, X, V_eps) over modeled areas. Covariate columns are
/// standardized to mean 0, sample SD 1 across the modeled areas; a constant
/// column is an error.
Design build_design(const Eigen::VectorXd& y, const Eigen::MatrixXd& raw_columns,
                    const std::vector<std::string>& names, const Eigen::VectorXd& v_eps,
                    const ModelSpec& spec);

/// GLS coefficients (X' V^-1 X)^-1 X' V^-1 y. Rank-deficient X is an error
/// naming the collinear columns.
Eigen::VectorXd gls_beta(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& V, const std::vector<std::string>* names = nullptr);

/// Admissible rho interval (1/lambda_min, 1/lambda_max) of W, shrunk by 1e-6.
std::pair<double, double> rho_bounds(const Eigen::MatrixXd& W);

/// Restricted log-likelihood with beta profiled out (constants dropped):
///   l_R = -1/2 [ log|V| + log|X'V^-1 X| + r' V^-1 r ].
double restricted_loglik(double sigma2_v, double rho, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                         const Eigen::MatrixXd* W);

struct RemlOptions {
  double tol = 1e-8;
  int max_evals_per_start = 400;
  /// Extra starting points (sigma2_v, rho) tried before the default grid.
  std::vector<std::pair<double, double>> warm_starts;
  /// Precomputed rho bounds (skips the eigen-decomposition of W).
  std::optional<std::pair<double, double>> rho_interval;
  /// Shrink the default multi-start grid to this many starts (>=1).
  int n_starts = 5;
};

/// REML fit of the log-scale area model. W is required for SAR effects and
/// ignored for independent effects.
SfhFit reml_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                const Eigen::MatrixXd* W, const ModelSpec& spec, const RemlOptions& opts = {});

/// Spatial EBLUP on the log scale for one area:
///   x_i' beta + [G V^-1 (y - X beta)]_i.
double eblup(const SfhFit& fit, const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int area);

Eigen::VectorXd eblup_all(const SfhFit& fit, const Eigen::VectorXd& y, const Eigen::MatrixXd& X);

/// Plug-in log-scale prediction variance diag(G - G V^-1 G). Diagnostics
/// only; it ignores parameter-estimation and upscaling uncertainty.
Eigen::VectorXd naive_mse_log(const SfhFit& fit);

/// Back-transformation to the original scale:
///   mu = exp(eblup + mse/2), tau = N * mu,
///   rmse_total = tau * sqrt(expm1(mse)) (log-normal delta rule).
AreaPrediction back_transform(const std::string& region_id, double eblup_log, double mse_log,
                              const std::string& mse_source, double population_count);

}  // namespace sae::sfh
