#pragma once

#include <string>
#include <vector>

#include "sae/bootstrap.hpp"
#include "sae/config.hpp"
#include "sae/geometry.hpp"
#include "sae/sfh.hpp"
#include "sae/survey.hpp"
#include "sae/variogram.hpp"

namespace sae::pipe {

/// Everything the model-side subcommands share, assembled from the stage
/// files named in the config. Modeled areas are exactly those with a usable
/// direct estimate and finite covariate values.
struct ModelData {
  geo::RegionSet regions;
  std::vector<survey::DirectEstimate> direct;  // region-set order
  std::vector<int> modeled;
  Eigen::VectorXd y;
  Eigen::VectorXd v_eps;
  Eigen::VectorXd n_pop;
  Eigen::MatrixXd raw_columns;
  std::vector<std::string> column_names;
  int upscaled_column = -1;
  Eigen::MatrixXd W;
  std::vector<std::string> island_ids;
  std::vector<std::string> excluded_ids;  // not modeled, with reasons
  vario::VariogramModel vario;
  bool have_vario = false;
  geo::Locations grid_locs;
  Eigen::VectorXd grid_values;
  bool have_grid = false;
};

ModelData assemble_model_data(const cfg::PipelineConfig& cfg, bool need_grid);

/// REML fit on the assembled data, with scaler and column names attached.
sfh::SfhFit fit_model(const ModelData& data, const cfg::PipelineConfig& cfg);

boot::BootstrapInputs make_bootstrap_inputs(const ModelData& data,
                                            const cfg::PipelineConfig& cfg);

// Subcommands. Each validates its inputs before writing anything and throws
// on failure; artifacts land under cfg.out_dir.
void cmd_direct(const cfg::PipelineConfig& cfg);
void cmd_upscale(const cfg::PipelineConfig& cfg);
void cmd_fit(const cfg::PipelineConfig& cfg);
void cmd_bootstrap(const cfg::PipelineConfig& cfg);
void cmd_test(const cfg::PipelineConfig& cfg);
void cmd_simulate(const cfg::PipelineConfig& cfg);
void cmd_diagnose(const cfg::PipelineConfig& cfg);

// Stage-file helpers shared with the test suites.
std::vector<survey::DirectEstimate> read_direct_csv(const std::string& path);
void write_direct_csv(const std::string& path, const cfg::PipelineConfig& cfg,
                      const std::vector<survey::DirectEstimate>& direct);
vario::VariogramModel read_variogram_json(const std::string& path);

}  // namespace sae::pipe
