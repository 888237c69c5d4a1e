#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace sae::survey {

struct SurveyRecord {
  std::string region_id;
  int size_class = 0;  // 1..2
  int type_class = 0;  // 1..3
  double y = 0.0;
};

struct CensusCell {
  std::string region_id;
  int size_class = 0;
  int type_class = 0;
  long long count = 0;  // N_ist
};

/// Post-stratified direct estimate of the area total plus its log-scale
/// transform for the area-level model. `usable` is false exactly when the
/// estimated total is non-positive or the area has no sample.
struct DirectEstimate {
  std::string region_id;
  double tau_tilde = 0.0;
  double var_tau = 0.0;
  double log_mu_tilde = 0.0;
  double var_log = 0.0;
  int n_i = 0;
  bool usable = false;
};

using CellKey = std::tuple<std::string, int, int>;

struct WeightTable {
  std::map<CellKey, double> weights;     // (i,s,t) -> N_ist / n_ist
  std::vector<CensusCell> uncovered;     // census population, no sample
};

/// Proportional post-stratification weights per (region, size, type) cell.
/// Every sampled cell must have a census counterpart with N >= n.
WeightTable poststratify(const std::vector<SurveyRecord>& survey,
                         const std::vector<CensusCell>& census);

/// Weighted total and its variance for one area:
///   tau = sum w*y,  var = sum w*(w-1)*y^2.
DirectEstimate direct_total(const std::vector<SurveyRecord>& survey, const WeightTable& weights,
                            const std::string& region_id);

/// Fills the log-scale mean and delta-method variance:
///   log_mu = log(tau / N),  var_log = var_tau / tau^2, floored at
///   `var_floor` so the model covariance stays invertible.
DirectEstimate log_scale(DirectEstimate est, long long population_count,
                         double var_floor = 1e-8);

}  // namespace sae::survey
