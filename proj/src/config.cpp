#include "sae/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sae/numeric.hpp"

namespace sae::cfg {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Binder {
  std::map<std::string, std::function<void(const std::string&)>> setters;
  std::map<std::string, std::function<std::string()>> getters;

  void add_string(const std::string& key, std::string* p) {
    setters[key] = [p](const std::string& v) { *p = v; };
    getters[key] = [p]() { return *p; };
  }
  void add_double(const std::string& key, double* p) {
    setters[key] = [p, key](const std::string& v) {
      char* end = nullptr;
      *p = std::strtod(v.c_str(), &end);
      if (end == v.c_str() || *end != '\0')
        throw std::runtime_error("config key " + key + ": invalid number '" + v + "'");
    };
    getters[key] = [p]() { return format_double(*p); };
  }
  void add_int(const std::string& key, int* p) {
    setters[key] = [p, key](const std::string& v) {
      char* end = nullptr;
      const long x = std::strtol(v.c_str(), &end, 10);
      if (end == v.c_str() || *end != '\0')
        throw std::runtime_error("config key " + key + ": invalid integer '" + v + "'");
      *p = static_cast<int>(x);
    };
    getters[key] = [p]() { return std::to_string(*p); };
  }
  void add_u64(const std::string& key, std::uint64_t* p) {
    setters[key] = [p, key](const std::string& v) {
      char* end = nullptr;
      *p = std::strtoull(v.c_str(), &end, 10);
      if (end == v.c_str() || *end != '\0')
        throw std::runtime_error("config key " + key + ": invalid seed '" + v + "'");
    };
    getters[key] = [p]() { return std::to_string(*p); };
  }
  void add_bool(const std::string& key, bool* p) {
    setters[key] = [p, key](const std::string& v) {
      if (v == "true" || v == "1") *p = true;
      else if (v == "false" || v == "0") *p = false;
      else throw std::runtime_error("config key " + key + ": invalid boolean '" + v + "'");
    };
    getters[key] = [p]() { return *p ? std::string("true") : std::string("false"); };
  }
  void add_string_list(const std::string& key, std::vector<std::string>* p) {
    setters[key] = [p](const std::string& v) { *p = split_list(v); };
    getters[key] = [p]() {
      std::string s;
      for (const auto& x : *p) s += (s.empty() ? "" : ",") + x;
      return s;
    };
  }
  void add_int_list(const std::string& key, std::vector<int>* p) {
    setters[key] = [p, key](const std::string& v) {
      p->clear();
      for (const auto& item : split_list(v)) p->push_back(std::stoi(item));
    };
    getters[key] = [p]() {
      std::string s;
      for (int x : *p) s += (s.empty() ? "" : ",") + std::to_string(x);
      return s;
    };
  }
};

Binder bind(PipelineConfig& c) {
  Binder b;
  b.add_string("regions", &c.regions_file);
  b.add_string("survey", &c.survey_file);
  b.add_string("census", &c.census_file);
  b.add_string("grid", &c.grid_file);
  b.add_string("covariates_file", &c.covariates_file);
  b.add_string("crs_note", &c.crs_note);
  b.add_string("direct_csv", &c.direct_csv);
  b.add_string("block_means_csv", &c.block_means_csv);
  b.add_string("variogram_json", &c.variogram_json);
  b.add_string("adjacency_predicate", &c.adjacency_predicate);
  b.add_double("adjacency_snap", &c.adjacency_snap);
  b.add_string("adjacency_universe", &c.adjacency_universe);
  b.add_string("variogram_family", &c.variogram_family);
  b.add_string("variogram_scale", &c.variogram_scale);
  b.add_string("variogram_estimator", &c.variogram_estimator);
  b.add_int("variogram_bins", &c.variogram_bins);
  b.add_double("variogram_max_lag", &c.variogram_max_lag);
  b.add_double("variogram_nu", &c.variogram_nu);
  b.add_int("kriging_q", &c.kriging_q);
  b.add_int_list("cv_candidates", &c.cv_candidates);
  b.add_int("cv_folds", &c.cv_folds);
  b.add_double("quadrature_density", &c.quadrature_density);
  b.add_double("buffer_km", &c.buffer_km);
  b.add_string_list("model_covariates", &c.model_covariates);
  b.add_string("random_effect", &c.random_effect);
  b.add_bool("intercept", &c.intercept);
  b.add_double("var_floor", &c.var_floor);
  b.add_bool("fit_naive_mse", &c.fit_naive_mse);
  b.add_int("bootstrap_B", &c.bootstrap_B);
  b.add_double("level", &c.level);
  b.add_int("sim_points", &c.sim_points);
  b.add_string("simulate_over", &c.simulate_over);
  b.add_string("bootstrap_covariate_sim", &c.bootstrap_covariate_sim);
  b.add_string("lr_parameter", &c.lr_parameter);
  b.add_string("lr_covariate_source", &c.lr_covariate_source);
  b.add_int("diag_variogram_sims", &c.diag_variogram_sims);
  b.add_int("scenario_rows", &c.scenario_rows);
  b.add_int("scenario_cols", &c.scenario_cols);
  b.add_double("scenario_cell_size", &c.scenario_cell_size);
  b.add_string("scenario_mode", &c.scenario_mode);
  b.add_int("scenario_units_per_area", &c.scenario_units_per_area);
  b.add_double("scenario_beta0", &c.scenario_beta0);
  b.add_double("scenario_beta1", &c.scenario_beta1);
  b.add_double("scenario_sigma2_v", &c.scenario_sigma2_v);
  b.add_double("scenario_rho", &c.scenario_rho);
  b.add_string("scenario_vario_family", &c.scenario_vario_family);
  b.add_double("scenario_vario_nugget", &c.scenario_vario_nugget);
  b.add_double("scenario_vario_sill", &c.scenario_vario_sill);
  b.add_double("scenario_vario_range", &c.scenario_vario_range);
  b.add_double("scenario_vario_nu", &c.scenario_vario_nu);
  b.add_double("scenario_grid_step", &c.scenario_grid_step);
  b.add_double("scenario_unit_sigma", &c.scenario_unit_sigma);
  b.add_double("scenario_frac_small", &c.scenario_frac_small);
  b.add_double("scenario_frac_large", &c.scenario_frac_large);
  b.add_double("scenario_ve_min", &c.scenario_ve_min);
  b.add_double("scenario_ve_max", &c.scenario_ve_max);
  b.add_u64("master_seed", &c.master_seed);
  b.add_int("workers", &c.workers);
  b.add_string("out", &c.out_dir);
  return b;
}

}  // namespace

std::string PipelineConfig::canonical() const {
  PipelineConfig copy = *this;
  Binder b = bind(copy);
  std::string s;
  for (const auto& [key, get] : b.getters) {
    // Execution-only keys do not affect results; leaving them out keeps
    // outputs byte-identical across worker counts and output locations.
    if (key == "workers" || key == "out") continue;
    s += key + " = " + get() + "\n";
  }
  return s;
}

std::string PipelineConfig::config_hash() const { return hex64(fnv1a(canonical())); }

PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
  PipelineConfig cfg;
  Binder b = bind(cfg);
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = b.setters.find(key);
    if (it == b.setters.end())
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": unknown key '" + key +
                               "'");
    it->second(value);
  }
  return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string resolve_path(const PipelineConfig& cfg, const std::string& name) {
  if (name.empty()) return name;
  if (name.front() == '/' || name.rfind("./", 0) == 0 || name.rfind("../", 0) == 0) return name;
  return cfg.out_dir + "/" + name;
}

}  // namespace sae::cfg
