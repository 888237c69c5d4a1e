#include "sae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sae/csv.hpp"
#include "sae/geojson.hpp"
#include "sae/kriging.hpp"
#include "sae/numeric.hpp"
#include "sae/simulate.hpp"
#include "sae/svg.hpp"
#include "sae/version.hpp"

namespace sae::pipe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) { return format_double(v); }

std::string metadata_line(const cfg::PipelineConfig& cfg) {
  return std::string(kToolName) + "/" + kToolVersion + " config=" + cfg.config_hash() +
         " seed=" + std::to_string(cfg.master_seed);
}

void ensure_out_dir(const cfg::PipelineConfig& cfg) { fs::create_directories(cfg.out_dir); }

json meta_json(const cfg::PipelineConfig& cfg) {
  return json{{"tool", std::string(kToolName) + "/" + kToolVersion},
              {"config_hash", cfg.config_hash()},
              {"master_seed", cfg.master_seed}};
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(1) << "\n";
}

struct GridData {
  geo::Locations locs;
  Eigen::VectorXd values;
};

GridData read_grid_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cx = t.require_column("x");
  const int cy = t.require_column("y");
  const int cv = t.require_column("value");
  GridData g;
  g.locs.resize(static_cast<Eigen::Index>(t.rows.size()), 2);
  g.values.resize(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ctx = path + " row " + std::to_string(i + 2);
    g.locs(static_cast<Eigen::Index>(i), 0) = csv::to_double(t.rows[i][static_cast<std::size_t>(cx)], ctx);
    g.locs(static_cast<Eigen::Index>(i), 1) = csv::to_double(t.rows[i][static_cast<std::size_t>(cy)], ctx);
    g.values[static_cast<Eigen::Index>(i)] = csv::to_double(t.rows[i][static_cast<std::size_t>(cv)], ctx);
  }
  if (g.locs.rows() == 0) throw std::runtime_error(path + ": no grid points");
  return g;
}

std::vector<survey::SurveyRecord> read_survey_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cr = t.require_column("region_id");
  const int cs = t.require_column("size_class");
  const int ct = t.require_column("type_class");
  const int cy = t.require_column("y");
  std::vector<survey::SurveyRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ctx = path + " row " + std::to_string(i + 2);
    out.push_back({t.rows[i][static_cast<std::size_t>(cr)],
                   static_cast<int>(csv::to_int(t.rows[i][static_cast<std::size_t>(cs)], ctx)),
                   static_cast<int>(csv::to_int(t.rows[i][static_cast<std::size_t>(ct)], ctx)),
                   csv::to_double(t.rows[i][static_cast<std::size_t>(cy)], ctx)});
  }
  return out;
}

std::vector<survey::CensusCell> read_census_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cr = t.require_column("region_id");
  const int cs = t.require_column("size_class");
  const int ct = t.require_column("type_class");
  const int cn = t.require_column("N");
  std::vector<survey::CensusCell> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ctx = path + " row " + std::to_string(i + 2);
    out.push_back({t.rows[i][static_cast<std::size_t>(cr)],
                   static_cast<int>(csv::to_int(t.rows[i][static_cast<std::size_t>(cs)], ctx)),
                   static_cast<int>(csv::to_int(t.rows[i][static_cast<std::size_t>(ct)], ctx)),
                   csv::to_int(t.rows[i][static_cast<std::size_t>(cn)], ctx)});
  }
  return out;
}

geo::AdjacencyOptions adjacency_options(const cfg::PipelineConfig& cfg) {
  geo::AdjacencyOptions opts;
  if (cfg.adjacency_predicate == "shared_edge") {
    opts.rule = geo::AdjacencyRule::kSharedEdge;
  } else if (cfg.adjacency_predicate == "shared_point") {
    opts.rule = geo::AdjacencyRule::kSharedPoint;
  } else {
    throw std::runtime_error("adjacency_predicate must be shared_edge or shared_point");
  }
  opts.snap_tolerance = cfg.adjacency_snap;
  return opts;
}

double auto_quadrature_density(const geo::RegionSet& regions, double configured) {
  if (configured > 0.0) return configured;
  double total = 0.0;
  for (const auto& r : regions.regions) total += geo::region_area(r);
  const double avg = total / std::max(1, regions.size());
  return 64.0 / avg;  // ~64 nodes in an average-sized region
}

std::vector<geo::BlockQuadrature> quadratures_for(const geo::RegionSet& regions,
                                                  const std::vector<int>& indices,
                                                  double density) {
  std::vector<geo::BlockQuadrature> quads;
  quads.reserve(indices.size());
  for (int i : indices)
    quads.push_back(geo::discretize_block(regions.regions[static_cast<std::size_t>(i)], density));
  return quads;
}

}  // namespace

std::vector<survey::DirectEstimate> read_direct_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cr = t.require_column("region_id");
  const int cn = t.require_column("n_i");
  const int ctau = t.require_column("tau_tilde");
  const int cvar = t.require_column("var_tau");
  const int clog = t.require_column("log_mu_tilde");
  const int cvl = t.require_column("var_log");
  const int cu = t.require_column("usable");
  std::vector<survey::DirectEstimate> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto ctx = path + " row " + std::to_string(i + 2);
    survey::DirectEstimate d;
    d.region_id = t.rows[i][static_cast<std::size_t>(cr)];
    d.n_i = static_cast<int>(csv::to_int(t.rows[i][static_cast<std::size_t>(cn)], ctx));
    d.tau_tilde = csv::to_double(t.rows[i][static_cast<std::size_t>(ctau)], ctx);
    d.var_tau = csv::to_double(t.rows[i][static_cast<std::size_t>(cvar)], ctx);
    d.log_mu_tilde = csv::to_double(t.rows[i][static_cast<std::size_t>(clog)], ctx);
    d.var_log = csv::to_double(t.rows[i][static_cast<std::size_t>(cvl)], ctx);
    d.usable = csv::to_bool(t.rows[i][static_cast<std::size_t>(cu)], ctx);
    out.push_back(d);
  }
  return out;
}

void write_direct_csv(const std::string& path, const cfg::PipelineConfig& cfg,
                      const std::vector<survey::DirectEstimate>& direct) {
  csv::Writer w(path);
  w.comment(metadata_line(cfg));
  w.row({"region_id", "n_i", "tau_tilde", "var_tau", "log_mu_tilde", "var_log", "usable"});
  for (const auto& d : direct)
    w.row({d.region_id, std::to_string(d.n_i), fmt(d.tau_tilde), fmt(d.var_tau),
           fmt(d.log_mu_tilde), fmt(d.var_log), d.usable ? "true" : "false"});
  w.close();
}

vario::VariogramModel read_variogram_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc;
  in >> doc;
  vario::VariogramModel m;
  m.family = vario::family_from_string(doc.at("family").get<std::string>());
  m.nugget = doc.at("nugget").get<double>();
  m.partial_sill = doc.at("partial_sill").get<double>();
  m.range = doc.at("range").get<double>();
  m.smoothness = doc.value("smoothness", 0.5);
  return m;
}

// ---------------------------------------------------------------------------

void cmd_direct(const cfg::PipelineConfig& cfg) {
  const geo::RegionSet regions = geo::read_geojson(cfg.regions_file, cfg.crs_note);
  const auto survey_rows = read_survey_csv(cfg.survey_file);
  const auto census_rows = read_census_csv(cfg.census_file);
  for (const auto& rec : survey_rows)
    if (regions.index_of(rec.region_id) < 0)
      throw std::runtime_error("survey region '" + rec.region_id + "' not in region set");
  for (const auto& cell : census_rows)
    if (regions.index_of(cell.region_id) < 0)
      throw std::runtime_error("census region '" + cell.region_id + "' not in region set");

  const survey::WeightTable weights = survey::poststratify(survey_rows, census_rows);

  std::vector<survey::DirectEstimate> direct;
  std::vector<std::string> unusable;
  for (const auto& region : regions.regions) {
    survey::DirectEstimate d = survey::direct_total(survey_rows, weights, region.id);
    d = survey::log_scale(d, region.population_count > 0 ? region.population_count : 1,
                          cfg.var_floor);
    if (!d.usable) unusable.push_back(region.id);
    direct.push_back(d);
  }

  ensure_out_dir(cfg);
  write_direct_csv(cfg::resolve_path(cfg, cfg.direct_csv), cfg, direct);

  json cov = meta_json(cfg);
  cov["unusable_areas"] = unusable;
  json uc = json::array();
  for (const auto& cell : weights.uncovered)
    uc.push_back({{"region_id", cell.region_id},
                  {"size_class", cell.size_class},
                  {"type_class", cell.type_class},
                  {"N", cell.count}});
  cov["uncovered_cells"] = uc;
  write_json(cfg.out_dir + "/coverage.json", cov);
  std::cerr << "direct: " << direct.size() << " areas, " << unusable.size() << " unusable, "
            << weights.uncovered.size() << " uncovered cells\n";
}

void cmd_upscale(const cfg::PipelineConfig& cfg) {
  const geo::RegionSet regions = geo::read_geojson(cfg.regions_file, cfg.crs_note);
  GridData grid = read_grid_csv(cfg.grid_file);

  // Buffer filter: keep grid points within buffer_km of the region union.
  const double buffer = cfg.buffer_km * 1000.0;
  {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < grid.locs.rows(); ++i)
      if (geo::distance_to_union(grid.locs.row(i).transpose(), regions) <= buffer)
        keep.push_back(i);
    if (keep.empty()) throw std::runtime_error("no usable grid points within the buffered region");
    GridData kept;
    kept.locs.resize(static_cast<Eigen::Index>(keep.size()), 2);
    kept.values.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      kept.locs.row(static_cast<Eigen::Index>(k)) = grid.locs.row(keep[k]);
      kept.values[static_cast<Eigen::Index>(k)] = grid.values[keep[k]];
    }
    grid = std::move(kept);
  }

  const bool log_scale = cfg.variogram_scale == "log";
  Eigen::VectorXd vario_values = grid.values;
  if (log_scale) {
    for (Eigen::Index i = 0; i < vario_values.size(); ++i) {
      if (!(vario_values[i] > 0.0))
        throw std::runtime_error("variogram_scale=log requires positive grid values");
      vario_values[i] = std::log(vario_values[i]);
    }
  }

  double max_lag = cfg.variogram_max_lag;
  if (max_lag <= 0.0) {
    const Eigen::Vector2d lo = grid.locs.colwise().minCoeff();
    const Eigen::Vector2d hi = grid.locs.colwise().maxCoeff();
    max_lag = (hi - lo).norm() / 3.0;
  }
  const auto estimator = cfg.variogram_estimator == "robust" ? vario::Estimator::kRobust
                                                             : vario::Estimator::kClassical;
  const vario::EmpiricalVariogram emp =
      vario::empirical_variogram(grid.locs, vario_values, estimator, max_lag, cfg.variogram_bins);
  const auto family = vario::family_from_string(cfg.variogram_family);
  std::optional<double> fix_nu;
  if (cfg.variogram_nu > 0.0) fix_nu = cfg.variogram_nu;
  const vario::VariogramModel model = vario::fit_ols(emp, family, fix_nu);

  int q = cfg.kriging_q;
  vario::CvCurve curve;
  bool ran_cv = false;
  if (q <= 0) {
    rng::Stream folds(cfg.master_seed, {rng::kLaneFolds});
    curve = vario::cv_neighborhood(grid.locs, vario_values, model, cfg.cv_candidates,
                                   cfg.cv_folds, folds);
    q = curve.selected;
    ran_cv = true;
  } else {
    std::cerr << "upscale: kriging_q pinned to " << q << ", cross-validation skipped\n";
  }
  q = std::min<int>(q, static_cast<int>(grid.locs.rows()));

  const double density = auto_quadrature_density(regions, cfg.quadrature_density);
  std::vector<int> all_idx(static_cast<std::size_t>(regions.size()));
  std::iota(all_idx.begin(), all_idx.end(), 0);
  const auto quads = quadratures_for(regions, all_idx, density);
  const auto preds = krige::upscale_all(regions, quads, grid.locs, grid.values, model, q);

  ensure_out_dir(cfg);
  {
    csv::Writer w(cfg::resolve_path(cfg, cfg.block_means_csv));
    w.comment(metadata_line(cfg));
    w.row({"region_id", "block_mean", "kriging_variance", "neighborhood", "n_nodes"});
    int failed = 0;
    for (const auto& p : preds) {
      if (p.ok) {
        w.row({p.region_id, fmt(p.block_mean), fmt(p.kriging_variance),
               std::to_string(p.neighborhood), std::to_string(p.n_nodes)});
      } else {
        ++failed;
        std::cerr << "upscale: region " << p.region_id << " failed: " << p.error << "\n";
        w.row({p.region_id, "nan", "nan", "0", "0"});
      }
    }
    w.close();
    if (failed > 0) std::cerr << "upscale: " << failed << " regions marked missing\n";
  }
  {
    json doc = meta_json(cfg);
    doc["family"] = vario::to_string(model.family);
    doc["nugget"] = model.nugget;
    doc["partial_sill"] = model.partial_sill;
    doc["range"] = model.range;
    doc["smoothness"] = model.smoothness;
    doc["convention"] = "range-over-h, c=1";
    doc["scale"] = cfg.variogram_scale;
    doc["estimator"] = cfg.variogram_estimator;
    doc["n_bins"] = static_cast<int>(emp.bins.size());
    doc["max_lag"] = emp.max_lag;
    doc["neighborhood"] = q;
    write_json(cfg::resolve_path(cfg, cfg.variogram_json), doc);
  }
  {
    csv::Writer w(cfg.out_dir + "/cv_curve.csv");
    w.comment(metadata_line(cfg));
    w.row({"neighborhood", "rmse", "selected", "note"});
    if (ran_cv) {
      for (std::size_t i = 0; i < curve.candidates.size(); ++i)
        w.row({std::to_string(curve.candidates[i]), fmt(curve.rmse[i]),
               curve.candidates[i] == curve.selected ? "true" : "false", curve.notes[i]});
    } else {
      w.row({std::to_string(q), "nan", "true", "pinned by config"});
    }
    w.close();
  }
  std::cerr << "upscale: q=" << q << ", variogram " << vario::to_string(model.family)
            << "(nugget=" << model.nugget << ", psill=" << model.partial_sill
            << ", range=" << model.range << ", nu=" << model.smoothness << ")\n";
}

// ---------------------------------------------------------------------------

ModelData assemble_model_data(const cfg::PipelineConfig& cfg, bool need_grid) {
  ModelData md;
  md.regions = geo::read_geojson(cfg.regions_file, cfg.crs_note);
  md.direct = read_direct_csv(cfg::resolve_path(cfg, cfg.direct_csv));

  std::map<std::string, const survey::DirectEstimate*> direct_by_id;
  for (const auto& d : md.direct) direct_by_id[d.region_id] = &d;

  // Covariate columns: "block_mean" from the upscale stage, everything else
  // from the covariates file.
  std::map<std::string, std::map<std::string, double>> cov_tables;  // name -> region -> value
  for (const auto& name : cfg.model_covariates) {
    if (name == "block_mean") {
      const csv::Table t = csv::read_file(cfg::resolve_path(cfg, cfg.block_means_csv));
      const int cr = t.require_column("region_id");
      const int cb = t.require_column("block_mean");
      for (const auto& row : t.rows)
        cov_tables[name][row[static_cast<std::size_t>(cr)]] =
            csv::to_double(row[static_cast<std::size_t>(cb)], "block_means");
    } else {
      if (cfg.covariates_file.empty())
        throw std::runtime_error("covariate '" + name + "' needs covariates_file");
      const csv::Table t = csv::read_file(cfg.covariates_file);
      const int cr = t.require_column("region_id");
      const int cc = t.require_column(name);
      for (const auto& row : t.rows)
        cov_tables[name][row[static_cast<std::size_t>(cr)]] =
            csv::to_double(row[static_cast<std::size_t>(cc)], cfg.covariates_file);
    }
  }

  // Modeled areas: usable direct estimate and finite covariates.
  std::vector<double> ys, ves, pops;
  std::vector<std::vector<double>> cols(cfg.model_covariates.size());
  for (int i = 0; i < md.regions.size(); ++i) {
    const auto& region = md.regions.regions[static_cast<std::size_t>(i)];
    const auto it = direct_by_id.find(region.id);
    if (it == direct_by_id.end()) {
      md.excluded_ids.push_back(region.id + " (no direct estimate)");
      continue;
    }
    if (!it->second->usable) {
      md.excluded_ids.push_back(region.id + " (unusable direct estimate)");
      continue;
    }
    bool cov_ok = true;
    std::vector<double> vals;
    for (const auto& name : cfg.model_covariates) {
      const auto& table = cov_tables[name];
      const auto cit = table.find(region.id);
      if (cit == table.end() || !std::isfinite(cit->second)) {
        cov_ok = false;
        break;
      }
      vals.push_back(cit->second);
    }
    if (!cov_ok) {
      md.excluded_ids.push_back(region.id + " (missing covariate)");
      continue;
    }
    md.modeled.push_back(i);
    ys.push_back(it->second->log_mu_tilde);
    ves.push_back(std::max(it->second->var_log, cfg.var_floor));
    pops.push_back(static_cast<double>(region.population_count));
    for (std::size_t c = 0; c < vals.size(); ++c) cols[c].push_back(vals[c]);
  }
  const auto m = static_cast<Eigen::Index>(md.modeled.size());
  if (m < 3) throw std::runtime_error("fewer than 3 modeled areas; cannot fit");
  md.y = Eigen::Map<Eigen::VectorXd>(ys.data(), m);
  md.v_eps = Eigen::Map<Eigen::VectorXd>(ves.data(), m);
  md.n_pop = Eigen::Map<Eigen::VectorXd>(pops.data(), m);
  md.raw_columns.resize(m, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    md.raw_columns.col(static_cast<Eigen::Index>(c)) =
        Eigen::Map<Eigen::VectorXd>(cols[c].data(), m);
  md.column_names = cfg.model_covariates;
  for (std::size_t c = 0; c < cfg.model_covariates.size(); ++c)
    if (cfg.model_covariates[c] == "block_mean") md.upscaled_column = static_cast<int>(c);

  // Contiguity over the configured adjacency universe.
  const geo::AdjacencyOptions aopts = adjacency_options(cfg);
  geo::ContiguityMatrix cm;
  if (cfg.adjacency_universe == "all_regions") {
    cm = geo::subset_contiguity(geo::build_contiguity(md.regions, aopts), md.modeled);
  } else if (cfg.adjacency_universe == "modeled_only") {
    geo::RegionSet sub;
    sub.crs_note = md.regions.crs_note;
    for (int i : md.modeled) sub.regions.push_back(md.regions.regions[static_cast<std::size_t>(i)]);
    cm = geo::build_contiguity(sub, aopts);
  } else {
    throw std::runtime_error("adjacency_universe must be modeled_only or all_regions");
  }
  md.W = cm.w;
  for (int isl : cm.islands)
    md.island_ids.push_back(
        md.regions.regions[static_cast<std::size_t>(md.modeled[static_cast<std::size_t>(isl)])].id);

  if (need_grid) {
    md.vario = read_variogram_json(cfg::resolve_path(cfg, cfg.variogram_json));
    md.have_vario = true;
    const GridData g = read_grid_csv(cfg.grid_file);
    md.grid_locs = g.locs;
    md.grid_values = g.values;
    md.have_grid = true;
  }
  return md;
}

sfh::SfhFit fit_model(const ModelData& md, const cfg::PipelineConfig& cfg) {
  sfh::ModelSpec spec;
  spec.covariates = md.column_names;
  spec.random_effect = sfh::random_effect_from_string(cfg.random_effect);
  spec.intercept = cfg.intercept;
  const sfh::Design design = sfh::build_design(md.y, md.raw_columns, md.column_names, md.v_eps,
                                               spec);
  const Eigen::MatrixXd* W = spec.random_effect == sfh::RandomEffect::kSar ? &md.W : nullptr;
  sfh::SfhFit fit = sfh::reml_fit(design.y, design.X, design.v_eps, W, spec);
  fit.scaler = design.scaler;
  fit.beta_names = design.column_names;
  return fit;
}

boot::BootstrapInputs make_bootstrap_inputs(const ModelData& md, const cfg::PipelineConfig& cfg) {
  boot::BootstrapInputs in;
  in.regions = &md.regions;
  in.modeled = md.modeled;
  in.W = md.W;
  in.y = md.y;
  in.raw_columns = md.raw_columns;
  in.column_names = md.column_names;
  in.v_eps = md.v_eps;
  in.n_pop = md.n_pop;
  in.spec.covariates = md.column_names;
  in.spec.random_effect = sfh::random_effect_from_string(cfg.random_effect);
  in.spec.intercept = cfg.intercept;
  in.upscaled_column = md.upscaled_column;
  if (cfg.bootstrap_covariate_sim == "on")
    in.covariate_sim = true;
  else if (cfg.bootstrap_covariate_sim == "off")
    in.covariate_sim = false;
  else
    in.covariate_sim = md.upscaled_column >= 0;
  if (in.covariate_sim) {
    if (!md.have_grid || !md.have_vario)
      throw std::runtime_error("covariate simulation needs the grid file and variogram.json");
    in.vario_model = md.vario;
    in.vario_log_scale = cfg.variogram_scale == "log";
    in.grid_locs = md.grid_locs;
    in.grid_values = md.grid_values;
    const double density = auto_quadrature_density(md.regions, cfg.quadrature_density);
    in.quads = quadratures_for(md.regions, md.modeled, density);
    in.krige_q = cfg.kriging_q > 0 ? cfg.kriging_q : 15;
    in.krige_q = std::min<int>(in.krige_q, static_cast<int>(md.grid_locs.rows()));
    in.n_sim_points = cfg.sim_points;
    in.sim_buffer = cfg.simulate_over == "buffered" ? cfg.buffer_km * 1000.0 : 0.0;
  }
  return in;
}

namespace {

void write_predictions_csv(const std::string& path, const cfg::PipelineConfig& cfg,
                           const ModelData& md, const Eigen::VectorXd& eblups,
                           const Eigen::VectorXd& mse_log, const std::string& mse_source) {
  csv::Writer w(path);
  w.comment(metadata_line(cfg));
  w.row({"region_id", "eblup_log", "mse_log", "mse_source", "mu_hat", "tau_hat", "rmse_total"});
  for (Eigen::Index i = 0; i < eblups.size(); ++i) {
    const auto& region =
        md.regions.regions[static_cast<std::size_t>(md.modeled[static_cast<std::size_t>(i)])];
    const auto p = sfh::back_transform(region.id, eblups[i],
                                       mse_log.size() ? std::max(0.0, mse_log[i]) : 0.0,
                                       mse_source, md.n_pop[i]);
    w.row({p.region_id, fmt(p.eblup_log), fmt(p.mse_log), p.mse_source, fmt(p.mu_hat),
           fmt(p.tau_hat), fmt(p.rmse_total)});
  }
  w.close();
}

json fit_report(const cfg::PipelineConfig& cfg, const ModelData& md, const sfh::SfhFit& fit,
                const std::string& se_source,
                const std::vector<boot::ParamSummary>* boot_params) {
  json doc = meta_json(cfg);
  json coeffs = json::array();
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    json c = {{"name", fit.beta_names[static_cast<std::size_t>(j)]},
              {"estimate", fit.beta[j]}};
    if (boot_params) {
      c["se"] = (*boot_params)[static_cast<std::size_t>(j)].se;
      c["ci_lo"] = (*boot_params)[static_cast<std::size_t>(j)].ci_lo;
      c["ci_hi"] = (*boot_params)[static_cast<std::size_t>(j)].ci_hi;
    } else {
      c["se"] = std::sqrt(fit.beta_cov(j, j));
    }
    c["se_source"] = se_source;
    coeffs.push_back(c);
  }
  doc["coefficients"] = coeffs;
  doc["sigma2_v"] = fit.sigma2_v;
  doc["rho"] = fit.rho;
  doc["random_effect"] = sfh::to_string(fit.spec.random_effect);
  doc["loglik_restricted"] = fit.loglik_restricted;
  doc["boundary_sigma2"] = fit.boundary_sigma2;
  doc["rho_interval"] = {fit.rho_min, fit.rho_max};
  doc["convergence"] = {{"converged", fit.convergence.converged},
                        {"evaluations", fit.convergence.evaluations},
                        {"starts", fit.convergence.starts}};
  doc["n_modeled"] = static_cast<int>(md.modeled.size());
  doc["islands"] = md.island_ids;
  doc["excluded"] = md.excluded_ids;
  return doc;
}

}  // namespace

void cmd_fit(const cfg::PipelineConfig& cfg) {
  const ModelData md = assemble_model_data(cfg, false);
  const sfh::SfhFit fit = fit_model(md, cfg);
  const Eigen::MatrixXd X = fit.scaler.design(md.raw_columns, fit.spec.intercept);
  const Eigen::VectorXd eblups = sfh::eblup_all(fit, md.y, X);

  Eigen::VectorXd mse;
  std::string source = "deferred";
  if (cfg.fit_naive_mse) {
    mse = sfh::naive_mse_log(fit);
    source = "naive_g1";
  }
  ensure_out_dir(cfg);
  write_predictions_csv(cfg.out_dir + "/predictions.csv", cfg, md, eblups, mse, source);
  write_json(cfg.out_dir + "/fit.json", fit_report(cfg, md, fit, "gls_plugin", nullptr));
  std::cerr << "fit: " << md.modeled.size() << " areas, sigma2_v=" << fit.sigma2_v
            << ", rho=" << fit.rho << "\n";
}

void cmd_bootstrap(const cfg::PipelineConfig& cfg) {
  const ModelData md = assemble_model_data(cfg, true);
  const sfh::SfhFit fit = fit_model(md, cfg);
  const boot::BootstrapInputs in = make_bootstrap_inputs(md, cfg);
  const boot::BootstrapRun run =
      boot::run_algorithm1(fit, in, cfg.bootstrap_B, cfg.master_seed, cfg.workers);
  const Eigen::VectorXd mse = boot::mse_eblup(run);
  const auto params = boot::summarize_se_ci(fit, run, cfg.level);

  const Eigen::MatrixXd X = fit.scaler.design(md.raw_columns, fit.spec.intercept);
  const Eigen::VectorXd eblups = sfh::eblup_all(fit, md.y, X);

  ensure_out_dir(cfg);
  write_predictions_csv(cfg.out_dir + "/predictions.csv", cfg, md, eblups, mse, "bootstrap");
  {
    csv::Writer w(cfg.out_dir + "/mse.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "mse_log"});
    for (Eigen::Index i = 0; i < mse.size(); ++i)
      w.row({md.regions.regions[static_cast<std::size_t>(md.modeled[static_cast<std::size_t>(i)])].id,
             fmt(mse[i])});
    w.close();
  }
  {
    csv::Writer w(cfg.out_dir + "/boot_params.csv");
    w.comment(metadata_line(cfg));
    std::vector<std::string> header = {"b", "success"};
    for (const auto& n : fit.beta_names) header.push_back("beta_" + n);
    header.push_back("sigma2_v");
    header.push_back("rho");
    w.row(header);
    for (std::size_t b = 0; b < run.replicates.size(); ++b) {
      const auto& r = run.replicates[b];
      std::vector<std::string> row = {std::to_string(b), r.success ? "true" : "false"};
      for (Eigen::Index j = 0; j < fit.beta.size(); ++j)
        row.push_back(r.success ? fmt(r.beta[j]) : "nan");
      row.push_back(r.success ? fmt(r.sigma2_v) : "nan");
      row.push_back(r.success ? fmt(r.rho) : "nan");
      w.row(row);
    }
    w.close();
  }
  {
    csv::Writer w(cfg.out_dir + "/boot_area.csv");
    w.comment(metadata_line(cfg));
    w.row({"b", "region_id", "true_log_mu", "pred_log_mu"});
    for (std::size_t b = 0; b < run.replicates.size(); ++b) {
      const auto& r = run.replicates[b];
      if (!r.success) continue;
      for (Eigen::Index i = 0; i < r.true_log_mu.size(); ++i)
        w.row({std::to_string(b),
               md.regions.regions[static_cast<std::size_t>(md.modeled[static_cast<std::size_t>(i)])].id,
               fmt(r.true_log_mu[i]), fmt(r.pred_log_mu[i])});
    }
    w.close();
  }
  {
    json doc = fit_report(cfg, md, fit, "bootstrap", &params);
    doc["B"] = run.B;
    doc["n_success"] = run.n_success;
    doc["reliable"] = run.reliable;
    doc["failure_reasons"] = run.failure_reasons;
    doc["level"] = cfg.level;
    json ps = json::array();
    for (const auto& p : params)
      ps.push_back({{"name", p.name},
                    {"estimate", p.estimate},
                    {"se", p.se},
                    {"ci_lo", p.ci_lo},
                    {"ci_hi", p.ci_hi}});
    doc["parameters"] = ps;
    write_json(cfg.out_dir + "/run_summary.json", doc);
  }
  std::cerr << "bootstrap: " << run.n_success << "/" << run.B << " replicates succeeded"
            << (run.reliable ? "" : " (UNRELIABLE: below 90% success)") << "\n";
}

void cmd_test(const cfg::PipelineConfig& cfg) {
  const bool needs_grid =
      cfg.lr_covariate_source == "simulated" &&
      std::find(cfg.model_covariates.begin(), cfg.model_covariates.end(), "block_mean") !=
          cfg.model_covariates.end();
  const ModelData md = assemble_model_data(cfg, needs_grid);
  boot::BootstrapInputs in = make_bootstrap_inputs(md, cfg);
  if (!needs_grid) in.covariate_sim = false;
  const boot::LrTestResult res =
      boot::run_algorithm2(in, cfg.lr_parameter, cfg.bootstrap_B, cfg.master_seed, cfg.workers,
                           cfg.lr_covariate_source == "simulated");

  ensure_out_dir(cfg);
  json doc = meta_json(cfg);
  doc["parameter"] = res.parameter;
  doc["l_obs"] = res.l_obs;
  doc["p_value"] = res.p_value;
  doc["B"] = res.B;
  doc["n_failed"] = res.n_failed;
  doc["covariate_source"] = cfg.lr_covariate_source;
  write_json(cfg.out_dir + "/lr_test.json", doc);
  {
    csv::Writer w(cfg.out_dir + "/lr_replicates.csv");
    w.comment(metadata_line(cfg));
    w.row({"b", "l_star"});
    w.row({"0", fmt(res.l_obs)});  // observed statistic is replicate zero
    for (std::size_t i = 0; i < res.l_replicates.size(); ++i)
      w.row({std::to_string(i + 1), fmt(res.l_replicates[i])});
    w.close();
  }
  std::cerr << "test: parameter=" << res.parameter << " l_obs=" << res.l_obs
            << " p=" << res.p_value << "\n";
}

void cmd_simulate(const cfg::PipelineConfig& cfg) {
  sim::ScenarioConfig sc;
  sc.rows = cfg.scenario_rows;
  sc.cols = cfg.scenario_cols;
  sc.cell_size = cfg.scenario_cell_size;
  sc.mode = cfg.scenario_mode;
  sc.units_per_area = cfg.scenario_units_per_area;
  sc.beta0 = cfg.scenario_beta0;
  sc.beta1 = cfg.scenario_beta1;
  sc.sigma2_v = cfg.scenario_sigma2_v;
  sc.rho = cfg.scenario_rho;
  sc.field.family = vario::family_from_string(cfg.scenario_vario_family);
  sc.field.nugget = cfg.scenario_vario_nugget;
  sc.field.partial_sill = cfg.scenario_vario_sill;
  sc.field.range = cfg.scenario_vario_range;
  sc.field.smoothness = cfg.scenario_vario_nu;
  sc.grid_step = cfg.scenario_grid_step;
  sc.unit_sigma = cfg.scenario_unit_sigma;
  sc.frac_small = cfg.scenario_frac_small;
  sc.frac_large = cfg.scenario_frac_large;
  sc.ve_min = cfg.scenario_ve_min;
  sc.ve_max = cfg.scenario_ve_max;
  sc.krige_q = cfg.kriging_q > 0 ? cfg.kriging_q : 15;
  sc.quad_density = cfg.quadrature_density > 0.0 ? cfg.quadrature_density : 64.0;

  const sim::SyntheticScenario s = sim::make_scenario(sc, cfg.master_seed);
  ensure_out_dir(cfg);
  geo::write_geojson(s.regions, cfg.out_dir + "/regions.geojson");
  {
    csv::Writer w(cfg.out_dir + "/grid.csv");
    w.comment(metadata_line(cfg));
    w.row({"x", "y", "value"});
    for (Eigen::Index i = 0; i < s.grid_locs.rows(); ++i)
      w.row({fmt(s.grid_locs(i, 0)), fmt(s.grid_locs(i, 1)), fmt(s.grid_values[i])});
    w.close();
  }
  if (s.config.mode == "survey") {
    csv::Writer w(cfg.out_dir + "/survey.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "size_class", "type_class", "y"});
    for (const auto& rec : s.sample)
      w.row({rec.region_id, std::to_string(rec.size_class), std::to_string(rec.type_class),
             fmt(rec.y)});
    w.close();
    csv::Writer c(cfg.out_dir + "/census.csv");
    c.comment(metadata_line(cfg));
    c.row({"region_id", "size_class", "type_class", "N"});
    for (const auto& cell : s.census)
      c.row({cell.region_id, std::to_string(cell.size_class), std::to_string(cell.type_class),
             std::to_string(cell.count)});
    c.close();
  } else {
    write_direct_csv(cfg.out_dir + "/direct.csv", cfg, s.direct);
  }
  {
    csv::Writer w(cfg.out_dir + "/truth.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "x_raw", "x_std", "u_true", "log_mu_true"});
    for (int i = 0; i < s.regions.size(); ++i)
      w.row({s.regions.regions[static_cast<std::size_t>(i)].id, fmt(s.x_raw[i]), fmt(s.x_std[i]),
             fmt(s.u_true[i]), fmt(s.log_mu_true[i])});
    w.close();
  }
  {
    json doc = meta_json(cfg);
    doc["mode"] = s.config.mode;
    doc["rows"] = s.config.rows;
    doc["cols"] = s.config.cols;
    doc["truth"] = {{"beta0", s.config.beta0},
                    {"beta1", s.config.beta1},
                    {"sigma2_v", s.config.sigma2_v},
                    {"rho", s.config.rho}};
    doc["field"] = {{"family", vario::to_string(s.config.field.family)},
                    {"nugget", s.config.field.nugget},
                    {"partial_sill", s.config.field.partial_sill},
                    {"range", s.config.field.range},
                    {"smoothness", s.config.field.smoothness}};
    doc["files"] = {"regions.geojson", "grid.csv",
                    s.config.mode == "survey" ? "survey.csv" : "direct.csv", "truth.csv"};
    write_json(cfg.out_dir + "/manifest.json", doc);
  }
  std::cerr << "simulate: wrote " << s.config.mode << " scenario with " << s.regions.size()
            << " areas to " << cfg.out_dir << "\n";
}

void cmd_diagnose(const cfg::PipelineConfig& cfg) {
  const bool want_sim_panels =
      std::find(cfg.model_covariates.begin(), cfg.model_covariates.end(), "block_mean") !=
      cfg.model_covariates.end();
  const ModelData md = assemble_model_data(cfg, want_sim_panels);
  const sfh::SfhFit fit = fit_model(md, cfg);
  boot::BootstrapInputs in = make_bootstrap_inputs(md, cfg);
  if (!want_sim_panels) in.covariate_sim = false;

  // Reconstruct the bootstrap run from stage files when present.
  boot::BootstrapRun run;
  bool have_run = false;
  Eigen::VectorXd mse;
  const std::string area_path = cfg.out_dir + "/boot_area.csv";
  if (fs::exists(area_path)) {
    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < md.modeled.size(); ++i)
      pos[md.regions.regions[static_cast<std::size_t>(md.modeled[i])].id] = static_cast<int>(i);
    const csv::Table t = csv::read_file(area_path);
    const int cb = t.require_column("b");
    const int cr = t.require_column("region_id");
    const int ctr = t.require_column("true_log_mu");
    const int cp = t.require_column("pred_log_mu");
    std::map<int, boot::ReplicateRecord> recs;
    const auto m = static_cast<Eigen::Index>(md.modeled.size());
    for (const auto& row : t.rows) {
      const int b = static_cast<int>(csv::to_int(row[static_cast<std::size_t>(cb)], area_path));
      auto& rec = recs[b];
      if (rec.true_log_mu.size() == 0) {
        rec.true_log_mu = Eigen::VectorXd::Zero(m);
        rec.pred_log_mu = Eigen::VectorXd::Zero(m);
        rec.success = true;
      }
      const auto it = pos.find(row[static_cast<std::size_t>(cr)]);
      if (it == pos.end()) continue;
      rec.true_log_mu[it->second] = csv::to_double(row[static_cast<std::size_t>(ctr)], area_path);
      rec.pred_log_mu[it->second] = csv::to_double(row[static_cast<std::size_t>(cp)], area_path);
    }
    for (auto& [b, rec] : recs) run.replicates.push_back(std::move(rec));
    run.B = static_cast<int>(run.replicates.size());
    run.n_success = run.B;
    run.master_seed = cfg.master_seed;
    have_run = run.B >= 2;
    if (have_run) mse = boot::mse_eblup(run);
  } else {
    std::cerr << "diagnose: no bootstrap outputs found; envelope panels skipped\n";
  }

  boot::DiagnosticsOptions dopts;
  dopts.n_variogram_sims = cfg.diag_variogram_sims;
  dopts.variogram_bins = cfg.variogram_bins;
  dopts.level = cfg.level;
  const boot::DiagnosticsBundle bundle = boot::diagnostics_suite(
      fit, have_run ? &run : nullptr, in, md.direct, mse, cfg.master_seed, dopts);

  const std::string dir = cfg.out_dir + "/diagnostics";
  fs::create_directories(dir);
  {
    csv::Writer w(dir + "/qq_residuals.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "theoretical", "sample"});
    for (const auto& p : bundle.qq_residuals)
      w.row({p.region_id, fmt(p.theoretical), fmt(p.sample)});
    w.close();
    csv::Writer w2(dir + "/qq_ranef.csv");
    w2.comment(metadata_line(cfg));
    w2.row({"region_id", "theoretical", "sample"});
    for (const auto& p : bundle.qq_ranef) w2.row({p.region_id, fmt(p.theoretical), fmt(p.sample)});
    w2.close();
  }
  {
    csv::Writer w(dir + "/eblup_envelope.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "actual_log_tau", "boot_mean", "lo", "hi"});
    for (const auto& r : bundle.eblup_envelope)
      w.row({r.region_id, fmt(r.actual_log_tau), fmt(r.boot_mean), fmt(r.lo), fmt(r.hi)});
    w.close();
  }
  {
    csv::Writer w(dir + "/variogram_envelope.csv");
    w.comment(metadata_line(cfg));
    w.row({"lag", "gamma_data", "lo", "hi", "inside"});
    for (const auto& r : bundle.variogram_envelope)
      w.row({fmt(r.lag), fmt(r.gamma_data), fmt(r.lo), fmt(r.hi), r.inside ? "true" : "false"});
    w.close();
  }
  {
    csv::Writer w(dir + "/point_counts.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "actual_grid_points", "mean_simulated_points"});
    for (const auto& r : bundle.point_counts)
      w.row({r.region_id, fmt(r.actual_points), fmt(r.mean_simulated)});
    w.close();
  }
  {
    csv::Writer w(dir + "/mse_comparison.csv");
    w.comment(metadata_line(cfg));
    w.row({"region_id", "var_direct", "cv_direct", "rmse_model", "cv_model"});
    for (const auto& r : bundle.mse_comparison)
      w.row({r.region_id, fmt(r.var_direct), fmt(r.cv_direct), fmt(r.rmse_model),
             fmt(r.cv_model)});
    w.close();
  }
  {
    csv::Writer w(dir + "/aggregation.csv");
    w.comment(metadata_line(cfg));
    w.row({"group", "direct_sum", "model_sum", "ci_lo", "ci_hi"});
    for (const auto& r : bundle.aggregation)
      w.row({r.group, fmt(r.direct_sum), fmt(r.model_sum), fmt(r.ci_lo), fmt(r.ci_hi)});
    w.close();
  }
  {
    json doc = meta_json(cfg);
    doc["cv_direct_avg"] = bundle.cv_direct_avg;
    doc["cv_model_avg"] = bundle.cv_model_avg;
    doc["cv_reduction"] = bundle.cv_reduction;
    doc["variogram_bins_inside"] = [&] {
      int inside = 0;
      for (const auto& r : bundle.variogram_envelope) inside += r.inside ? 1 : 0;
      return inside;
    }();
    doc["variogram_bins_total"] = static_cast<int>(bundle.variogram_envelope.size());
    write_json(dir + "/summary.json", doc);
  }

  // Convenience renderings; the CSVs above carry the data of record.
  {
    svg::Series pts, ref;
    for (const auto& p : bundle.qq_residuals) {
      pts.x.push_back(p.theoretical);
      pts.y.push_back(p.sample);
    }
    if (!pts.x.empty()) {
      ref.line = true;
      ref.color = "#888888";
      ref.x = {pts.x.front(), pts.x.back()};
      ref.y = {pts.x.front(), pts.x.back()};
      svg::write_plot(dir + "/qq_residuals.svg", "Standardized sampling errors", {ref, pts},
                      "theoretical quantile", "sample quantile");
    }
  }
  if (!bundle.variogram_envelope.empty()) {
    svg::Series data, lo, hi;
    data.line = lo.line = hi.line = true;
    data.color = "#d62728";
    lo.color = hi.color = "#e8c547";
    for (const auto& r : bundle.variogram_envelope) {
      data.x.push_back(r.lag);
      data.y.push_back(r.gamma_data);
      lo.x.push_back(r.lag);
      lo.y.push_back(r.lo);
      hi.x.push_back(r.lag);
      hi.y.push_back(r.hi);
    }
    svg::write_plot(dir + "/variogram_envelope.svg", "Trajectory variogram envelope",
                    {lo, hi, data}, "lag", "semivariance");
  }
  if (!bundle.eblup_envelope.empty()) {
    svg::Series mean_pts, lo_pts, hi_pts, diag;
    mean_pts.color = "#d62728";
    lo_pts.color = hi_pts.color = "#e8c547";
    for (const auto& r : bundle.eblup_envelope) {
      mean_pts.x.push_back(r.actual_log_tau);
      mean_pts.y.push_back(r.boot_mean);
      lo_pts.x.push_back(r.actual_log_tau);
      lo_pts.y.push_back(r.lo);
      hi_pts.x.push_back(r.actual_log_tau);
      hi_pts.y.push_back(r.hi);
    }
    diag.line = true;
    diag.color = "#888888";
    const double a = *std::min_element(mean_pts.x.begin(), mean_pts.x.end());
    const double b = *std::max_element(mean_pts.x.begin(), mean_pts.x.end());
    diag.x = {a, b};
    diag.y = {a, b};
    svg::write_plot(dir + "/eblup_envelope.svg", "Bootstrap predicted totals (log scale)",
                    {diag, lo_pts, hi_pts, mean_pts}, "actual prediction", "bootstrap replicates");
  }
  std::cerr << "diagnose: wrote bundle to " << dir << "\n";
}

}  // namespace sae::pipe
