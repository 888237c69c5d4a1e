#include "sae/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sae::sim {

namespace {

constexpr double kCoincidentTol = 1e-9;

/// Maps each row to a unique-site index. Groups are numbered by their first
/// appearance in the input, so when rows 0..nd-1 are distinct data sites
/// their group ids equal their row indices and a later row maps below nd iff
/// it coincides with a data site.
std::vector<int> unify_sites(const geo::Locations& locs, geo::Locations& unique_out) {
  const Eigen::Index n = locs.rows();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (locs(a, 0) != locs(b, 0)) return locs(a, 0) < locs(b, 0);
    if (locs(a, 1) != locs(b, 1)) return locs(a, 1) < locs(b, 1);
    return a < b;
  });

  std::vector<int> map(static_cast<std::size_t>(n), -1);
  std::vector<int> rep;  // first original index per group, discovery order
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int i = order[k];
    if (map[static_cast<std::size_t>(i)] >= 0) continue;
    const int g = static_cast<int>(rep.size());
    map[static_cast<std::size_t>(i)] = g;
    int first = i;
    for (std::size_t j = k + 1; j < order.size(); ++j) {
      const int c = order[j];
      if (locs(c, 0) - locs(i, 0) > kCoincidentTol) break;
      if (map[static_cast<std::size_t>(c)] < 0 &&
          (locs.row(c) - locs.row(i)).norm() <= kCoincidentTol) {
        map[static_cast<std::size_t>(c)] = g;
        first = std::min(first, c);
      }
    }
    rep.push_back(first);
  }

  // Renumber groups by first original appearance.
  std::vector<int> group_order(rep.size());
  std::iota(group_order.begin(), group_order.end(), 0);
  std::sort(group_order.begin(), group_order.end(),
            [&](int a, int b) { return rep[static_cast<std::size_t>(a)] < rep[static_cast<std::size_t>(b)]; });
  std::vector<int> new_id(rep.size());
  for (std::size_t k = 0; k < group_order.size(); ++k)
    new_id[static_cast<std::size_t>(group_order[k])] = static_cast<int>(k);
  for (auto& g : map) g = new_id[static_cast<std::size_t>(g)];

  unique_out.resize(static_cast<Eigen::Index>(rep.size()), 2);
  for (std::size_t k = 0; k < group_order.size(); ++k)
    unique_out.row(static_cast<Eigen::Index>(k)) = locs.row(rep[static_cast<std::size_t>(group_order[k])]);
  return map;
}

Eigen::MatrixXd covariance_matrix(const geo::Locations& locs, const vario::VariogramModel& model) {
  const Eigen::Index n = locs.rows();
  const double sill = model.sill();
  Eigen::MatrixXd C(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    C(i, i) = sill;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = sill - vario::gamma_at((locs.row(i) - locs.row(j)).norm(), model);
      C(i, j) = C(j, i) = c;
    }
  }
  return C;
}

/// Cholesky with escalating diagonal jitter (1e-10 .. 1e-6 of the sill).
Eigen::MatrixXd chol_with_jitter(Eigen::MatrixXd C, double sill, double& jitter_used) {
  jitter_used = 0.0;
  for (double jit = 0.0; jit <= 1.1e-6; jit = (jit == 0.0 ? 1e-10 : jit * 10.0)) {
    Eigen::MatrixXd A = C;
    if (jit > 0.0) A.diagonal().array() += jit * sill;
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      jitter_used = jit;
      return llt.matrixL();
    }
  }
  throw std::runtime_error("field covariance is not positive definite at maximum jitter");
}

}  // namespace

FieldRealization simulate_unconditional(const geo::Locations& locs,
                                        const vario::VariogramModel& model, rng::Stream& stream) {
  FieldRealization out;
  out.locations = locs;
  if (model.sill() <= 0.0) {  // degenerate model: the field is deterministic
    out.values = Eigen::VectorXd::Zero(locs.rows());
    return out;
  }
  geo::Locations uniq;
  const std::vector<int> map = unify_sites(locs, uniq);
  const Eigen::Index nu = uniq.rows();

  const Eigen::MatrixXd L = [&] {
    double jit = 0.0;
    Eigen::MatrixXd l = chol_with_jitter(covariance_matrix(uniq, model), model.sill(), jit);
    out.jitter_used = jit;
    return l;
  }();

  Eigen::VectorXd g(nu);
  for (Eigen::Index i = 0; i < nu; ++i) g[i] = stream.normal();
  const Eigen::VectorXd z = L * g;

  out.values.resize(locs.rows());
  for (Eigen::Index i = 0; i < locs.rows(); ++i) out.values[i] = z[map[static_cast<std::size_t>(i)]];
  return out;
}

ConditionalSimulator::ConditionalSimulator(const geo::Locations& data_locs,
                                           const Eigen::VectorXd& data_values,
                                           const vario::VariogramModel& model)
    : model_(model) {
  if (data_locs.rows() == 0) throw std::invalid_argument("conditional simulation needs data");
  const krige::Cloud cloud = krige::dedupe_colocated(data_locs, data_values, kCoincidentTol);
  locs_ = cloud.locs;
  vals_ = cloud.values;
  const Eigen::Index n = locs_.rows();
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double g = vario::gamma_at((locs_.row(i) - locs_.row(j)).norm(), model_);
      lhs(i, j) = lhs(j, i) = g;
    }
    lhs(i, n) = lhs(n, i) = 1.0;
  }
  bordered_lu_.compute(lhs);
}

Eigen::VectorXd ConditionalSimulator::simulate(const geo::Locations& targets, rng::Stream& stream,
                                               double* jitter_used) const {
  const Eigen::Index nt = targets.rows();
  const Eigen::Index nd = locs_.rows();
  if (jitter_used) *jitter_used = 0.0;
  if (model_.sill() <= 0.0) {
    // Degenerate model: zero simulated field, and with gamma identically 0
    // every weight vector summing to one predicts the same value; use the
    // data mean, or the datum itself at a conditioning site.
    Eigen::VectorXd out = Eigen::VectorXd::Constant(nt, vals_.mean());
    for (Eigen::Index t = 0; t < nt; ++t)
      for (Eigen::Index i = 0; i < nd; ++i)
        if ((locs_.row(i) - targets.row(t)).norm() <= kCoincidentTol) {
          out[t] = vals_[i];
          break;
        }
    return out;
  }

  // Joint site list: data first so targets coinciding with data share draws.
  geo::Locations joint(nd + nt, 2);
  joint.topRows(nd) = locs_;
  joint.bottomRows(nt) = targets;
  geo::Locations uniq;
  const std::vector<int> map = unify_sites(joint, uniq);

  double jit = 0.0;
  const Eigen::MatrixXd L = chol_with_jitter(covariance_matrix(uniq, model_), model_.sill(), jit);
  if (jitter_used) *jitter_used = jit;
  Eigen::VectorXd g(uniq.rows());
  for (Eigen::Index i = 0; i < uniq.rows(); ++i) g[i] = stream.normal();
  const Eigen::VectorXd zu = L * g;

  Eigen::VectorXd z_data(nd);
  for (Eigen::Index i = 0; i < nd; ++i) z_data[i] = zu[map[static_cast<std::size_t>(i)]];
  const Eigen::VectorXd resid = vals_ - z_data;  // y - Y* at the data sites

  Eigen::VectorXd out(nt);
  Eigen::VectorXd rhs(nd + 1);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const int u = map[static_cast<std::size_t>(nd + t)];
    if (u < static_cast<int>(nd)) {
      out[t] = vals_[u];  // conditioning site: reproduce the datum
      continue;
    }
    for (Eigen::Index i = 0; i < nd; ++i)
      rhs[i] = vario::gamma_at((locs_.row(i).transpose() - targets.row(t).transpose()).norm(),
                               model_);
    rhs[nd] = 1.0;
    const Eigen::VectorXd sol = bordered_lu_.solve(rhs);
    out[t] = zu[u] + sol.head(nd).dot(resid);
  }
  return out;
}

FieldRealization simulate_conditional(const geo::Locations& targets,
                                      const geo::Locations& data_locs,
                                      const Eigen::VectorXd& data_values,
                                      const vario::VariogramModel& model, rng::Stream& stream) {
  const ConditionalSimulator sim(data_locs, data_values, model);
  FieldRealization out;
  out.locations = targets;
  out.conditional = true;
  out.values = sim.simulate(targets, stream, &out.jitter_used);
  return out;
}

std::vector<krige::BlockPrediction> simulate_covariate_round(
    const geo::RegionSet& domain, const std::vector<int>& predict_indices,
    const std::vector<geo::BlockQuadrature>& quads, const ConditionalSimulator& cond,
    const CovariateRoundOptions& opts, rng::Stream& location_stream, rng::Stream& field_stream,
    const std::vector<double>* gamma_vv) {
  if (predict_indices.size() != quads.size())
    throw std::invalid_argument("simulate_covariate_round: quads/indices mismatch");
  const geo::Locations pts =
      opts.buffer > 0.0
          ? geo::sample_uniform_buffered(domain, opts.n_points, opts.buffer, location_stream)
          : geo::sample_uniform_locations(domain, opts.n_points, location_stream);
  Eigen::VectorXd traj = cond.simulate(pts, field_stream);
  if (opts.log_gaussian) traj = traj.array().exp();

  std::vector<krige::BlockPrediction> out(quads.size());
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const auto& region = domain.regions[static_cast<std::size_t>(predict_indices[i])];
    const double gvv = gamma_vv ? (*gamma_vv)[i] : -1.0;
    try {
      out[i] = krige::block_krige(region, quads[i], pts, traj, cond.model(), opts.krige_q, gvv);
    } catch (const std::exception& e) {
      out[i] = {};
      out[i].region_id = region.id;
      out[i].ok = false;
      out[i].error = e.what();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Fixed stratum layout: (size, type) cell shares of the area population and
// mean multipliers (large farms emit more). Multipliers are normalized below
// so the population mean stays mu_i.
struct StratumLayout {
  int s, t;
  double share;
  double mult;
};
const StratumLayout kStrata[6] = {
    {1, 1, 0.25, 0.56}, {1, 2, 0.15, 0.91}, {1, 3, 0.10, 0.63},
    {2, 1, 0.20, 1.28}, {2, 2, 0.15, 2.08}, {2, 3, 0.15, 1.44},
};

}  // namespace

SyntheticScenario make_scenario(const ScenarioConfig& cfg, std::uint64_t master_seed) {
  if (cfg.rows < 1 || cfg.cols < 1) throw std::invalid_argument("make_scenario: empty lattice");
  if (cfg.mode != "survey" && cfg.mode != "model")
    throw std::invalid_argument("make_scenario: mode must be survey or model");
  if (cfg.units_per_area < 6) throw std::invalid_argument("make_scenario: units_per_area < 6");

  SyntheticScenario sc;
  sc.config = cfg;
  sc.master_seed = master_seed;

  // Lattice of unit cells, row-major, quadrant group labels.
  sc.regions.crs_note = "synthetic planar lattice (unit = " +
                        std::to_string(cfg.cell_size) + " m)";
  for (int r = 0; r < cfg.rows; ++r) {
    for (int c = 0; c < cfg.cols; ++c) {
      geo::Region reg;
      reg.id = "r" + std::to_string(r) + "c" + std::to_string(c);
      const double x0 = c * cfg.cell_size, y0 = r * cfg.cell_size;
      reg.rings.push_back({{x0, y0},
                           {x0 + cfg.cell_size, y0},
                           {x0 + cfg.cell_size, y0 + cfg.cell_size},
                           {x0, y0 + cfg.cell_size}});
      const int qr = (r * 2) / std::max(1, cfg.rows);
      const int qc = (c * 2) / std::max(1, cfg.cols);
      reg.group_id = "Q" + std::to_string(qr * 2 + qc + 1);
      sc.regions.regions.push_back(std::move(reg));
    }
  }
  const int m = sc.regions.size();

  // Gridded covariate: log-Gaussian field observed on a regular grid.
  {
    geo::Point lo, hi;
    geo::set_bbox(sc.regions, lo, hi);
    std::vector<geo::Point> pts;
    for (double y = lo.y() + 0.5 * cfg.grid_step; y < hi.y(); y += cfg.grid_step)
      for (double x = lo.x() + 0.5 * cfg.grid_step; x < hi.x(); x += cfg.grid_step)
        pts.emplace_back(x, y);
    sc.grid_locs.resize(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) sc.grid_locs.row(static_cast<Eigen::Index>(i)) = pts[i];
    rng::Stream field(master_seed, {rng::kLaneScenario, 1});
    const FieldRealization f = simulate_unconditional(sc.grid_locs, cfg.field, field);
    sc.grid_values = f.values.array().exp();
  }

  // Upscaled covariate per area = block kriging of the raw grid values with
  // the (log-scale) field variogram, exactly as the pipeline computes it.
  {
    std::vector<geo::BlockQuadrature> quads;
    quads.reserve(static_cast<std::size_t>(m));
    for (const auto& reg : sc.regions.regions)
      quads.push_back(geo::discretize_block(reg, cfg.quad_density / (cfg.cell_size * cfg.cell_size)));
    const int q = std::min<int>(cfg.krige_q, static_cast<int>(sc.grid_locs.rows()));
    const auto preds = krige::upscale_all(sc.regions, quads, sc.grid_locs, sc.grid_values,
                                          cfg.field, q);
    sc.x_raw.resize(m);
    for (int i = 0; i < m; ++i) {
      if (!preds[static_cast<std::size_t>(i)].ok)
        throw std::runtime_error("make_scenario: block kriging failed for region " +
                                 preds[static_cast<std::size_t>(i)].region_id + ": " +
                                 preds[static_cast<std::size_t>(i)].error);
      sc.x_raw[i] = preds[static_cast<std::size_t>(i)].block_mean;
    }
    const double mean = sc.x_raw.mean();
    const double sd = std::sqrt((sc.x_raw.array() - mean).square().sum() /
                                static_cast<double>(std::max(1, m - 1)));
    if (sd <= 0.0) throw std::runtime_error("make_scenario: degenerate covariate field");
    sc.x_std = (sc.x_raw.array() - mean) / sd;
  }

  // SAR random effects and true area means.
  {
    const geo::ContiguityMatrix W = geo::build_contiguity(sc.regions);
    rng::Stream ranef(master_seed, {rng::kLaneScenario, 2});
    Eigen::VectorXd v(m);
    for (int i = 0; i < m; ++i) v[i] = ranef.normal() * std::sqrt(cfg.sigma2_v);
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(m, m) - cfg.rho * W.w;
    sc.u_true = M.partialPivLu().solve(v);
    sc.log_mu_true =
        (cfg.beta0 + cfg.beta1 * sc.x_std.array() + sc.u_true.array()).matrix();
  }

  if (cfg.mode == "model") {
    rng::Stream noise(master_seed, {rng::kLaneScenario, 3});
    sc.direct.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      auto& d = sc.direct[static_cast<std::size_t>(i)];
      const double ve = cfg.ve_min + (cfg.ve_max - cfg.ve_min) * noise.uniform();
      const double eps = noise.normal() * std::sqrt(ve);
      d.region_id = sc.regions.regions[static_cast<std::size_t>(i)].id;
      d.n_i = std::max(2, cfg.units_per_area / 6);
      d.log_mu_tilde = sc.log_mu_true[i] + eps;
      d.var_log = ve;
      d.tau_tilde = cfg.units_per_area * std::exp(d.log_mu_tilde);
      d.var_tau = ve * d.tau_tilde * d.tau_tilde;
      d.usable = true;
      sc.regions.regions[static_cast<std::size_t>(i)].population_count = cfg.units_per_area;
    }
    return sc;
  }

  // Survey mode: enumerate a finite population per stratum cell, then draw a
  // stratified SRS with the configured size-class fractions.
  double norm = 0.0;
  std::array<long long, 6> cell_n{};
  double total_units = 0.0;
  for (int c = 0; c < 6; ++c) {
    cell_n[static_cast<std::size_t>(c)] =
        std::max<long long>(1, std::llround(kStrata[c].share * cfg.units_per_area));
    total_units += static_cast<double>(cell_n[static_cast<std::size_t>(c)]);
  }
  for (int c = 0; c < 6; ++c)
    norm += static_cast<double>(cell_n[static_cast<std::size_t>(c)]) / total_units * kStrata[c].mult;

  rng::Stream popstream(master_seed, {rng::kLaneScenario, 4});
  rng::Stream sampstream(master_seed, {rng::kLaneScenario, 5});
  const double lognorm_shift = -0.5 * cfg.unit_sigma * cfg.unit_sigma;

  for (int i = 0; i < m; ++i) {
    const double mu = std::exp(sc.log_mu_true[i]);
    long long n_pop = 0;
    for (int c = 0; c < 6; ++c) {
      const long long nc = cell_n[static_cast<std::size_t>(c)];
      n_pop += nc;
      sc.census.push_back({sc.regions.regions[static_cast<std::size_t>(i)].id, kStrata[c].s,
                           kStrata[c].t, nc});
      std::vector<double> ys(static_cast<std::size_t>(nc));
      for (long long u = 0; u < nc; ++u) {
        const double e = std::exp(lognorm_shift + cfg.unit_sigma * popstream.normal());
        ys[static_cast<std::size_t>(u)] = mu * (kStrata[c].mult / norm) * e;
        sc.population.push_back({i, kStrata[c].s, kStrata[c].t, ys[static_cast<std::size_t>(u)]});
      }
      const double frac = kStrata[c].s == 1 ? cfg.frac_small : cfg.frac_large;
      const long long ns = std::clamp<long long>(std::llround(frac * static_cast<double>(nc)),
                                                 1, nc);
      // Partial Fisher-Yates over unit indices.
      std::vector<long long> idx(static_cast<std::size_t>(nc));
      std::iota(idx.begin(), idx.end(), 0);
      for (long long k = 0; k < ns; ++k) {
        const auto j = k + static_cast<long long>(sampstream.below(static_cast<std::uint64_t>(nc - k)));
        std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
        sc.sample.push_back({sc.regions.regions[static_cast<std::size_t>(i)].id, kStrata[c].s,
                             kStrata[c].t, ys[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]});
      }
    }
    sc.regions.regions[static_cast<std::size_t>(i)].population_count = n_pop;
  }
  return sc;
}

}  // namespace sae::sim
