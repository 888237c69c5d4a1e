#include "sae/survey.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sae::survey {

namespace {

std::string cell_name(const CellKey& k) {
  return "(" + std::get<0>(k) + ", s=" + std::to_string(std::get<1>(k)) +
         ", t=" + std::to_string(std::get<2>(k)) + ")";
}

void validate_classes(int s, int t, const std::string& where) {
  if (s < 1 || s > 2) throw std::runtime_error(where + ": size_class must be 1 or 2");
  if (t < 1 || t > 3) throw std::runtime_error(where + ": type_class must be 1, 2 or 3");
}

}  // namespace

WeightTable poststratify(const std::vector<SurveyRecord>& survey,
                         const std::vector<CensusCell>& census) {
  std::map<CellKey, long long> sample_n;
  for (const auto& rec : survey) {
    validate_classes(rec.size_class, rec.type_class, "survey record in " + rec.region_id);
    ++sample_n[{rec.region_id, rec.size_class, rec.type_class}];
  }
  std::map<CellKey, long long> census_n;
  for (const auto& cell : census) {
    validate_classes(cell.size_class, cell.type_class, "census cell in " + cell.region_id);
    if (cell.count < 0) throw std::runtime_error("negative census count in " + cell.region_id);
    census_n[{cell.region_id, cell.size_class, cell.type_class}] += cell.count;
  }

  WeightTable out;
  for (const auto& [key, n] : sample_n) {
    const auto it = census_n.find(key);
    if (it == census_n.end())
      throw std::runtime_error("survey cell " + cell_name(key) + " has no census counterpart");
    if (it->second < n)
      throw std::runtime_error("census undercount in cell " + cell_name(key) + ": N=" +
                               std::to_string(it->second) + " < n=" + std::to_string(n));
    out.weights[key] = static_cast<double>(it->second) / static_cast<double>(n);
  }
  for (const auto& [key, N] : census_n) {
    if (N > 0 && sample_n.find(key) == sample_n.end())
      out.uncovered.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), N});
  }
  return out;
}

DirectEstimate direct_total(const std::vector<SurveyRecord>& survey, const WeightTable& weights,
                            const std::string& region_id) {
  DirectEstimate est;
  est.region_id = region_id;
  for (const auto& rec : survey) {
    if (rec.region_id != region_id) continue;
    const CellKey key{rec.region_id, rec.size_class, rec.type_class};
    const auto it = weights.weights.find(key);
    if (it == weights.weights.end())
      throw std::runtime_error("no weight for sampled cell " + cell_name(key));
    const double w = it->second;
    est.tau_tilde += w * rec.y;
    est.var_tau += w * (w - 1.0) * rec.y * rec.y;
    ++est.n_i;
  }
  est.usable = est.n_i > 0;  // refined by log_scale
  return est;
}

DirectEstimate log_scale(DirectEstimate est, long long population_count, double var_floor) {
  if (est.n_i == 0 || est.tau_tilde <= 0.0) {
    est.usable = false;
    est.log_mu_tilde = 0.0;
    est.var_log = 0.0;
    return est;
  }
  if (population_count <= 0)
    throw std::runtime_error("log_scale: region " + est.region_id +
                             " has sampled units but population_count <= 0");
  est.log_mu_tilde = std::log(est.tau_tilde / static_cast<double>(population_count));
  est.var_log = std::max(est.var_tau / (est.tau_tilde * est.tau_tilde), var_floor);
  est.usable = true;
  return est;
}

}  // namespace sae::survey
