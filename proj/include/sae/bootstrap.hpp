#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sae/geometry.hpp"
#include "sae/sfh.hpp"
#include "sae/simulate.hpp"
#include "sae/survey.hpp"
#include "sae/variogram.hpp"

namespace sae::boot {

/// Everything one replicate needs, read-only. `modeled` indexes the areas
/// entering the model inside `regions`; y, raw_columns, v_eps, n_pop and
/// the quadratures are aligned with it.
struct BootstrapInputs {
  const geo::RegionSet* regions = nullptr;
  std::vector<int> modeled;
  Eigen::MatrixXd W;  // modeled x modeled; ignored for independent effects
  Eigen::VectorXd y;
  Eigen::MatrixXd raw_columns;
  std::vector<std::string> column_names;
  Eigen::VectorXd v_eps;
  Eigen::VectorXd n_pop;
  sfh::ModelSpec spec;

  // Upscaling layer (required when covariate_sim is on).
  int upscaled_column = -1;  // which raw column is re-kriged per replicate
  vario::VariogramModel vario_model;
  bool vario_log_scale = true;
  geo::Locations grid_locs;
  Eigen::VectorXd grid_values;  // raw scale
  std::vector<geo::BlockQuadrature> quads;
  int krige_q = 15;
  int n_sim_points = 1259;
  double sim_buffer = 0.0;
  bool covariate_sim = true;
};

struct ReplicateRecord {
  bool success = false;
  std::string failure;
  Eigen::VectorXd beta;
  double sigma2_v = 0.0;
  double rho = 0.0;
  Eigen::VectorXd true_log_mu;   // simulated linking-model mean per area
  Eigen::VectorXd pred_log_mu;   // refitted EBLUP per area
  Eigen::VectorXd block_means;   // simulated upscaled covariate (raw scale)
};

struct BootstrapRun {
  int B = 0;
  std::uint64_t master_seed = 0;
  std::vector<ReplicateRecord> replicates;
  int n_success = 0;
  bool reliable = false;  // n_success >= 0.9 B
  std::vector<std::string> failure_reasons;
};

/// Double parametric bootstrap: per replicate a fresh covariate round, a
/// draw of the linking + sampling model at the fitted parameters, and a
/// full REML refit. Failed refits are recorded, not fatal.
BootstrapRun run_algorithm1(const sfh::SfhFit& fit, const BootstrapInputs& in, int B,
                            std::uint64_t master_seed, int workers);

struct ParamSummary {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Sample SDs and type-7 percentile intervals of the replicate estimates.
/// Needs at least 2 successful replicates.
std::vector<ParamSummary> summarize_se_ci(const sfh::SfhFit& fit, const BootstrapRun& run,
                                          double level = 0.95);

/// Per-area bootstrap MSE of the log-scale EBLUP:
///   mean over replicates of (pred - true)^2.
Eigen::VectorXd mse_eblup(const BootstrapRun& run);

struct LrTestResult {
  std::string parameter;
  double l_obs = 0.0;
  std::vector<double> l_replicates;  // successful replicates only
  double p_value = 1.0;
  int B = 0;
  int n_failed = 0;
};

/// Monte Carlo likelihood-ratio test. `parameter` is a covariate column
/// name (restricted model drops it) or "rho" (restricted model uses
/// independent effects). Replicates are simulated from the restricted fit;
/// the observed statistic counts as replicate zero. When
/// `covariate_source_simulated` is false the refits reuse the observed
/// upscaled covariate instead of per-replicate simulations.
LrTestResult run_algorithm2(const BootstrapInputs& in, const std::string& parameter, int B,
                            std::uint64_t master_seed, int workers,
                            bool covariate_source_simulated = true);

// ---------------------------------------------------------------------------
// Diagnostics (plot-ready tables; CSV/SVG serialization lives in the CLI).

struct DiagnosticsOptions {
  int n_variogram_sims = 200;
  int variogram_bins = 15;
  double level = 0.95;
};

struct DiagnosticsBundle {
  struct QqPoint {
    std::string region_id;
    double theoretical = 0.0;
    double sample = 0.0;
  };
  std::vector<QqPoint> qq_residuals;
  std::vector<QqPoint> qq_ranef;

  struct EblupEnvRow {
    std::string region_id;
    double actual_log_tau = 0.0;
    double boot_mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
  };
  std::vector<EblupEnvRow> eblup_envelope;

  struct VarioEnvRow {
    double lag = 0.0;
    double gamma_data = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    bool inside = false;
  };
  std::vector<VarioEnvRow> variogram_envelope;

  struct CountRow {
    std::string region_id;
    double actual_points = 0.0;
    double mean_simulated = 0.0;
  };
  std::vector<CountRow> point_counts;

  struct MseRow {
    std::string region_id;
    double var_direct = 0.0;
    double cv_direct = 0.0;
    double rmse_model = 0.0;
    double cv_model = 0.0;
  };
  std::vector<MseRow> mse_comparison;
  double cv_direct_avg = 0.0;
  double cv_model_avg = 0.0;
  double cv_reduction = 0.0;  // 1 - model/direct

  struct GroupRow {
    std::string group;
    double direct_sum = 0.0;
    double model_sum = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
  };
  std::vector<GroupRow> aggregation;
};

/// Assembles the Q-Q tables, bootstrap envelopes, simulated point-count and
/// variogram envelope panels, the direct-vs-model MSE comparison and the
/// group-level aggregation with within-replicate CIs. `run` may be null;
/// envelope panels are skipped then.
DiagnosticsBundle diagnostics_suite(const sfh::SfhFit& fit, const BootstrapRun* run,
                                    const BootstrapInputs& in,
                                    const std::vector<survey::DirectEstimate>& direct,
                                    const Eigen::VectorXd& mse_log, std::uint64_t master_seed,
                                    const DiagnosticsOptions& opts = {});

}  // namespace sae::boot
