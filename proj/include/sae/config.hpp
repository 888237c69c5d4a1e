#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sae::cfg {

/// Flat key=value configuration. Every key has a documented default; unknown
/// keys are an error so typos fail fast.
struct PipelineConfig {
  // Input files
  std::string regions_file = "regions.geojson";
  std::string survey_file = "survey.csv";
  std::string census_file = "census.csv";
  std::string grid_file = "grid.csv";
  std::string covariates_file;  // optional extra area-level covariates
  std::string crs_note;

  // Stage outputs consumed by later stages (relative to out_dir unless absolute)
  std::string direct_csv = "direct.csv";
  std::string block_means_csv = "block_means.csv";
  std::string variogram_json = "variogram.json";

  // Adjacency
  std::string adjacency_predicate = "shared_edge";  // shared_edge | shared_point
  double adjacency_snap = 1e-6;
  std::string adjacency_universe = "modeled_only";  // modeled_only | all_regions

  // Variogram
  std::string variogram_family = "matern";
  std::string variogram_scale = "log";            // log | raw
  std::string variogram_estimator = "classical";  // classical | robust
  int variogram_bins = 15;
  double variogram_max_lag = 0.0;  // 0 = bbox diagonal / 3
  double variogram_nu = 0.0;       // 0 = grid {0.5,1,1.5,2.5}

  // Kriging / upscaling
  int kriging_q = 15;  // 0 = choose by cross-validation
  std::vector<int> cv_candidates = {5, 10, 15, 20, 25, 30};
  int cv_folds = 5;
  double quadrature_density = 0.0;  // 0 = 64 nodes per average region
  double buffer_km = 10.0;

  // Model
  std::vector<std::string> model_covariates = {"block_mean"};
  std::string random_effect = "sar";  // sar | independent
  bool intercept = true;
  double var_floor = 1e-8;
  bool fit_naive_mse = false;

  // Bootstrap / test / simulation
  int bootstrap_B = 1000;
  double level = 0.95;
  int sim_points = 1259;
  std::string simulate_over = "region";  // region | buffered
  std::string bootstrap_covariate_sim = "auto";  // auto | on | off
  std::string lr_parameter = "block_mean";       // column name or "rho"
  std::string lr_covariate_source = "simulated";  // simulated | observed
  int diag_variogram_sims = 200;

  // Scenario generation (cmd simulate)
  int scenario_rows = 6;
  int scenario_cols = 6;
  double scenario_cell_size = 1.0;
  std::string scenario_mode = "survey";  // survey | model
  int scenario_units_per_area = 36;
  double scenario_beta0 = 3.45;
  double scenario_beta1 = 0.61;
  double scenario_sigma2_v = 0.2;
  double scenario_rho = 0.7;
  std::string scenario_vario_family = "exponential";
  double scenario_vario_nugget = 0.0;
  double scenario_vario_sill = 1.0;
  double scenario_vario_range = 1.5;
  double scenario_vario_nu = 1.5;
  double scenario_grid_step = 0.5;
  double scenario_unit_sigma = 0.8;
  double scenario_frac_small = 0.15;
  double scenario_frac_large = 0.30;
  double scenario_ve_min = 0.05;
  double scenario_ve_max = 0.25;

  // Execution
  std::uint64_t master_seed = 20200101;
  int workers = 1;
  std::string out_dir = "out";

  /// Canonical serialized form (sorted key=value lines); hashed into outputs.
  std::string canonical() const;
  std::string config_hash() const;
};

PipelineConfig parse_config_file(const std::string& path);
PipelineConfig parse_config_text(const std::string& text, const std::string& origin);

/// Resolves a stage-output path against out_dir unless already absolute or
/// explicitly relative to the working directory.
std::string resolve_path(const PipelineConfig& cfg, const std::string& name);

}  // namespace sae::cfg
