#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sae/geometry.hpp"
#include "sae/kriging.hpp"
#include "sae/rng.hpp"
#include "sae/survey.hpp"
#include "sae/variogram.hpp"

namespace sae::sim {

struct FieldRealization {
  geo::Locations locations;
  Eigen::VectorXd values;
  bool log_gaussian = false;
  bool conditional = false;
  double jitter_used = 0.0;  // diagonal jitter added to make the factorization succeed
};

/// One zero-mean Gaussian draw with covariance C(h) = sill - gamma(h) at the
/// given sites. Coincident sites receive the same value. Jitter escalates
/// from 1e-10 to 1e-6 (relative to the sill) before giving up.
FieldRealization simulate_unconditional(const geo::Locations& locs,
                                        const vario::VariogramModel& model, rng::Stream& stream);

/// Conditional simulation engine: Y_c(u) = Y*(u) + a(u)'(y - Y*_data) with
/// ordinary kriging weights a(u) shared between the data and simulated
/// fields. The bordered data system is factored once and reused across
/// replicates. Values are on the Gaussian scale; exponentiate outside for
/// log-Gaussian fields.
class ConditionalSimulator {
 public:
  ConditionalSimulator(const geo::Locations& data_locs, const Eigen::VectorXd& data_values,
                       const vario::VariogramModel& model);

  Eigen::VectorXd simulate(const geo::Locations& targets, rng::Stream& stream,
                           double* jitter_used = nullptr) const;

  const geo::Locations& data_locations() const { return locs_; }
  const Eigen::VectorXd& data_values() const { return vals_; }
  const vario::VariogramModel& model() const { return model_; }

 private:
  geo::Locations locs_;  // deduplicated
  Eigen::VectorXd vals_;
  vario::VariogramModel model_;
  Eigen::PartialPivLU<Eigen::MatrixXd> bordered_lu_;
};

FieldRealization simulate_conditional(const geo::Locations& targets,
                                      const geo::Locations& data_locs,
                                      const Eigen::VectorXd& data_values,
                                      const vario::VariogramModel& model, rng::Stream& stream);

struct CovariateRoundOptions {
  int n_points = 1259;
  int krige_q = 15;
  double buffer = 0.0;        // >0 samples over the buffered domain
  bool log_gaussian = true;   // exponentiate the Gaussian trajectory
};

/// One inner round of the double bootstrap: uniform locations over the full
/// domain union, a conditional (log-)Gaussian trajectory, then block kriging
/// of the regions listed in `predict_indices` (quads aligned with that
/// list). `gamma_vv` may carry precomputed within-block semivariances.
std::vector<krige::BlockPrediction> simulate_covariate_round(
    const geo::RegionSet& domain, const std::vector<int>& predict_indices,
    const std::vector<geo::BlockQuadrature>& quads, const ConditionalSimulator& cond,
    const CovariateRoundOptions& opts, rng::Stream& location_stream, rng::Stream& field_stream,
    const std::vector<double>* gamma_vv = nullptr);

// ---------------------------------------------------------------------------
// Synthetic scenarios for oracles and acceptance runs.

struct ScenarioConfig {
  int rows = 6;
  int cols = 6;
  double cell_size = 1.0;
  std::string mode = "survey";  // survey | model
  int units_per_area = 36;
  double beta0 = 3.45;
  double beta1 = 0.61;  // 0 disables the covariate effect (null scenarios)
  double sigma2_v = 0.2;
  double rho = 0.7;
  vario::VariogramModel field{vario::Family::kExponential, 0.0, 1.0, 1.5, 0.5};
  double grid_step = 0.5;
  double unit_sigma = 0.8;   // within-cell log-normal sigma (survey mode)
  double frac_small = 0.15;  // sampling fraction, size class 1
  double frac_large = 0.30;  // sampling fraction, size class 2
  double ve_min = 0.05;      // model mode: per-area log-scale sampling variance
  double ve_max = 0.25;
  int krige_q = 15;
  double quad_density = 64.0;  // nodes per unit area
};

struct PopulationUnit {
  int region = 0;
  int size_class = 0;
  int type_class = 0;
  double y = 0.0;
};

struct SyntheticScenario {
  geo::RegionSet regions;
  geo::Locations grid_locs;
  Eigen::VectorXd grid_values;  // raw (positive) covariate field at grid sites
  std::vector<PopulationUnit> population;       // survey mode
  std::vector<survey::SurveyRecord> sample;     // survey mode
  std::vector<survey::CensusCell> census;       // survey mode
  std::vector<survey::DirectEstimate> direct;   // model mode
  Eigen::VectorXd x_raw;        // upscaled covariate per area (block kriging)
  Eigen::VectorXd x_std;        // standardized version entering the truth
  Eigen::VectorXd u_true;
  Eigen::VectorXd log_mu_true;
  ScenarioConfig config;
  std::uint64_t master_seed = 0;
};

/// Fully reproducible end-to-end test dataset on a rectangular lattice. The
/// linking model holds exactly on the log scale:
///   log mu_i = beta0 + beta1 * x_std_i + u_i, u = (I - rho W)^-1 v.
SyntheticScenario make_scenario(const ScenarioConfig& cfg, std::uint64_t master_seed);

}  // namespace sae::sim
