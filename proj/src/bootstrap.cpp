#include "sae/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sae/numeric.hpp"
#include "sae/parallel.hpp"

namespace sae::boot {

namespace {

struct RunContext {
  Eigen::MatrixXd X_obs;
  const Eigen::MatrixXd* W = nullptr;
  std::pair<double, double> rho_interval{0.0, 0.0};
  std::unique_ptr<Eigen::PartialPivLU<Eigen::MatrixXd>> sar_lu;  // I - rho_hat W
  std::unique_ptr<sim::ConditionalSimulator> cond;
  std::vector<double> gamma_vv;
  bool covariate_sim = false;
};

void validate_inputs(const BootstrapInputs& in) {
  if (in.regions == nullptr) throw std::invalid_argument("bootstrap: regions missing");
  const auto m = static_cast<Eigen::Index>(in.modeled.size());
  if (in.y.size() != m || in.v_eps.size() != m || in.raw_columns.rows() != m ||
      in.n_pop.size() != m)
    throw std::invalid_argument("bootstrap: input sizes disagree with modeled area count");
  if (static_cast<std::size_t>(in.raw_columns.cols()) != in.column_names.size())
    throw std::invalid_argument("bootstrap: column names mismatch");
  if (in.covariate_sim) {
    if (in.upscaled_column < 0 || in.upscaled_column >= in.raw_columns.cols())
      throw std::invalid_argument("bootstrap: covariate simulation needs the upscaled column");
    if (in.grid_locs.rows() == 0)
      throw std::invalid_argument("bootstrap: covariate simulation needs grid data");
    if (in.quads.size() != in.modeled.size())
      throw std::invalid_argument("bootstrap: one quadrature per modeled region required");
  }
}

RunContext make_context(const sfh::SfhFit& fit, const BootstrapInputs& in) {
  RunContext ctx;
  ctx.X_obs = fit.scaler.design(in.raw_columns, fit.spec.intercept);
  ctx.covariate_sim = in.covariate_sim;
  const bool sar = fit.spec.random_effect == sfh::RandomEffect::kSar;
  if (sar) {
    ctx.W = &in.W;
    ctx.rho_interval = {fit.rho_min, fit.rho_max};
    const Eigen::Index m = in.W.rows();
    ctx.sar_lu = std::make_unique<Eigen::PartialPivLU<Eigen::MatrixXd>>(
        Eigen::MatrixXd::Identity(m, m) - fit.rho * in.W);
  }
  if (in.covariate_sim) {
    Eigen::VectorXd data = in.grid_values;
    if (in.vario_log_scale) {
      for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (!(data[i] > 0.0))
          throw std::runtime_error("bootstrap: log-scale variogram needs positive grid values");
        data[i] = std::log(data[i]);
      }
    }
    ctx.cond = std::make_unique<sim::ConditionalSimulator>(in.grid_locs, data, in.vario_model);
    ctx.gamma_vv.reserve(in.quads.size());
    for (const auto& q : in.quads)
      ctx.gamma_vv.push_back(krige::within_block_gamma(q, in.vario_model));
  }
  return ctx;
}

/// REML refit with a warm start at the parent estimates; falls back to the
/// full multi-start grid on the same data before reporting failure.
sfh::SfhFit refit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const BootstrapInputs& in,
                  const RunContext& ctx, double warm_sigma2, double warm_rho) {
  sfh::RemlOptions opts;
  opts.warm_starts = {{warm_sigma2, warm_rho}};
  opts.n_starts = 1;
  if (ctx.W) opts.rho_interval = ctx.rho_interval;
  const Eigen::MatrixXd* W = ctx.W;
  try {
    return sfh::reml_fit(y, X, in.v_eps, W, in.spec, opts);
  } catch (const std::exception&) {
    opts.warm_starts.clear();
    opts.n_starts = 5;
    return sfh::reml_fit(y, X, in.v_eps, W, in.spec, opts);
  }
}

/// Simulated raw columns for one replicate: the upscaled column is replaced
/// by block kriging of a fresh conditional trajectory.
Eigen::MatrixXd simulate_columns(const BootstrapInputs& in, const RunContext& ctx,
                                 std::uint64_t seed, int b, Eigen::VectorXd* block_means_out) {
  Eigen::MatrixXd cols = in.raw_columns;
  if (!ctx.covariate_sim) return cols;
  rng::Stream loc(seed, {rng::kLaneLocations, static_cast<std::uint64_t>(b)});
  rng::Stream field(seed, {rng::kLaneField, static_cast<std::uint64_t>(b)});
  sim::CovariateRoundOptions ropts;
  ropts.n_points = in.n_sim_points;
  ropts.krige_q = in.krige_q;
  ropts.buffer = in.sim_buffer;
  ropts.log_gaussian = in.vario_log_scale;
  const auto preds = sim::simulate_covariate_round(*in.regions, in.modeled, in.quads, *ctx.cond,
                                                   ropts, loc, field, &ctx.gamma_vv);
  Eigen::VectorXd bm(static_cast<Eigen::Index>(preds.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].ok)
      throw std::runtime_error("covariate round failed for region " + preds[i].region_id + ": " +
                               preds[i].error);
    bm[static_cast<Eigen::Index>(i)] = preds[i].block_mean;
  }
  cols.col(in.upscaled_column) = bm;
  if (block_means_out) *block_means_out = bm;
  return cols;
}

}  // namespace

BootstrapRun run_algorithm1(const sfh::SfhFit& fit, const BootstrapInputs& in, int B,
                            std::uint64_t master_seed, int workers) {
  if (B < 1) throw std::invalid_argument("run_algorithm1: B must be >= 1");
  validate_inputs(in);
  const RunContext ctx = make_context(fit, in);
  const Eigen::Index m = in.y.size();
  const bool sar = fit.spec.random_effect == sfh::RandomEffect::kSar;
  const double sd_v = std::sqrt(std::max(0.0, fit.sigma2_v));

  BootstrapRun run;
  run.B = B;
  run.master_seed = master_seed;
  run.replicates.resize(static_cast<std::size_t>(B));

  parallel_for(static_cast<std::size_t>(B), workers, [&](std::size_t bi) {
    const int b = static_cast<int>(bi);
    ReplicateRecord& rec = run.replicates[bi];
    try {
      Eigen::VectorXd block_means;
      const Eigen::MatrixXd cols = simulate_columns(in, ctx, master_seed, b, &block_means);
      const Eigen::MatrixXd X = fit.scaler.design(cols, fit.spec.intercept);

      rng::Stream ranef(master_seed, {rng::kLaneRanef, static_cast<std::uint64_t>(b)});
      rng::Stream noise(master_seed, {rng::kLaneNoise, static_cast<std::uint64_t>(b)});
      Eigen::VectorXd v(m), eps(m);
      for (Eigen::Index i = 0; i < m; ++i) v[i] = sd_v * ranef.normal();
      for (Eigen::Index i = 0; i < m; ++i) eps[i] = std::sqrt(in.v_eps[i]) * noise.normal();
      const Eigen::VectorXd u = (sar && ctx.sar_lu) ? ctx.sar_lu->solve(v).eval() : v;

      rec.true_log_mu = X * fit.beta + u;
      const Eigen::VectorXd y_star = rec.true_log_mu + eps;

      const sfh::SfhFit star = refit(y_star, X, in, ctx, fit.sigma2_v, fit.rho);
      rec.beta = star.beta;
      rec.sigma2_v = star.sigma2_v;
      rec.rho = star.rho;
      rec.pred_log_mu = sfh::eblup_all(star, y_star, X);
      rec.block_means = block_means;
      rec.success = true;
    } catch (const std::exception& e) {
      rec.success = false;
      rec.failure = e.what();
    }
  });

  std::set<std::string> reasons;
  for (const auto& r : run.replicates) {
    if (r.success) ++run.n_success;
    else reasons.insert(r.failure);
  }
  run.failure_reasons.assign(reasons.begin(), reasons.end());
  run.reliable = run.n_success * 10 >= run.B * 9;
  if (run.n_success == 0) {
    std::string msg = "run_algorithm1: every replicate failed;";
    for (const auto& r : run.failure_reasons) msg += " " + r + ";";
    throw std::runtime_error(msg);
  }
  return run;
}

std::vector<ParamSummary> summarize_se_ci(const sfh::SfhFit& fit, const BootstrapRun& run,
                                          double level) {
  if (level <= 0.0 || level >= 1.0) throw std::invalid_argument("summarize_se_ci: bad level");
  const double alpha = 1.0 - level;
  const bool sar = fit.spec.random_effect == sfh::RandomEffect::kSar;

  std::vector<ParamSummary> out;
  const auto summarize = [&](const std::string& name, double estimate,
                             const std::function<double(const ReplicateRecord&)>& pick) {
    std::vector<double> vals;
    for (const auto& r : run.replicates)
      if (r.success) vals.push_back(pick(r));
    ParamSummary s;
    s.name = name;
    s.estimate = estimate;
    if (vals.size() >= 2) {
      s.se = sample_sd(vals);
      s.ci_lo = quantile_type7(vals, alpha / 2.0);
      s.ci_hi = quantile_type7(vals, 1.0 - alpha / 2.0);
    } else {
      s.se = std::numeric_limits<double>::quiet_NaN();
      s.ci_lo = s.ci_hi = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(s);
  };

  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    const std::string name = j < static_cast<Eigen::Index>(fit.beta_names.size())
                                 ? fit.beta_names[static_cast<std::size_t>(j)]
                                 : "beta_" + std::to_string(j);
    summarize(name, fit.beta[j], [j](const ReplicateRecord& r) { return r.beta[j]; });
  }
  summarize("sigma2_v", fit.sigma2_v, [](const ReplicateRecord& r) { return r.sigma2_v; });
  if (sar) summarize("rho", fit.rho, [](const ReplicateRecord& r) { return r.rho; });
  return out;
}

Eigen::VectorXd mse_eblup(const BootstrapRun& run) {
  int n = 0;
  Eigen::VectorXd acc;
  for (const auto& r : run.replicates) {
    if (!r.success) continue;
    const Eigen::VectorXd d = r.pred_log_mu - r.true_log_mu;
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(d.size());
    acc += d.cwiseProduct(d);
    ++n;
  }
  if (n == 0) throw std::runtime_error("mse_eblup: no successful replicates");
  return acc / static_cast<double>(n);
}

LrTestResult run_algorithm2(const BootstrapInputs& in, const std::string& parameter, int B,
                            std::uint64_t master_seed, int workers,
                            bool covariate_source_simulated) {
  if (B < 1) throw std::invalid_argument("run_algorithm2: B must be >= 1");
  validate_inputs(in);

  const bool test_rho = parameter == "rho";
  int drop_col = -1;
  if (test_rho) {
    if (in.spec.random_effect != sfh::RandomEffect::kSar)
      throw std::invalid_argument("run_algorithm2: testing rho needs a SAR model");
  } else {
    for (std::size_t j = 0; j < in.column_names.size(); ++j)
      if (in.column_names[j] == parameter) drop_col = static_cast<int>(j);
    if (drop_col < 0)
      throw std::invalid_argument("run_algorithm2: unknown parameter '" + parameter + "'");
  }

  // Restricted inputs: either the SAR term or one covariate column removed.
  BootstrapInputs in0 = in;
  if (test_rho) {
    in0.spec.random_effect = sfh::RandomEffect::kIndependent;
  } else {
    const Eigen::Index k = in.raw_columns.cols();
    Eigen::MatrixXd cols(in.raw_columns.rows(), k - 1);
    std::vector<std::string> names;
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j == drop_col) continue;
      cols.col(c++) = in.raw_columns.col(j);
      names.push_back(in.column_names[static_cast<std::size_t>(j)]);
    }
    in0.raw_columns = cols;
    in0.column_names = names;
    in0.spec.covariates = names;
    in0.upscaled_column = -1;
    if (in.upscaled_column >= 0 && in.upscaled_column != drop_col)
      in0.upscaled_column = in.upscaled_column - (in.upscaled_column > drop_col ? 1 : 0);
    in0.covariate_sim = in.covariate_sim && in0.upscaled_column >= 0;
  }

  const auto fit_on = [](const BootstrapInputs& bi, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& raw) {
    const sfh::Design d = sfh::build_design(y, raw, bi.column_names, bi.v_eps, bi.spec);
    const Eigen::MatrixXd* W =
        bi.spec.random_effect == sfh::RandomEffect::kSar ? &bi.W : nullptr;
    sfh::SfhFit f = sfh::reml_fit(d.y, d.X, d.v_eps, W, bi.spec);
    f.scaler = d.scaler;
    f.beta_names = d.column_names;
    return f;
  };

  const sfh::SfhFit m1 = fit_on(in, in.y, in.raw_columns);
  const sfh::SfhFit m0 = fit_on(in0, in.y, in0.raw_columns);
  const double l_obs = m1.loglik_restricted - m0.loglik_restricted;
  // For nested fits (same design, rho freed) a negative statistic can only
  // come from a failed optimum. Across different fixed-effect designs the
  // REML likelihoods are not ordered, so the sign carries no such signal.
  if (test_rho && l_obs < -1e-8)
    throw std::runtime_error("run_algorithm2: restricted likelihood exceeds unrestricted");

  const RunContext ctx0 = make_context(m0, in0);
  const RunContext ctx1 = make_context(m1, in);
  const bool sim_cov = covariate_source_simulated && in.covariate_sim;
  const Eigen::Index m = in.y.size();
  const double sd_v0 = std::sqrt(std::max(0.0, m0.sigma2_v));
  const bool sar0 = m0.spec.random_effect == sfh::RandomEffect::kSar;

  std::vector<double> lstats(static_cast<std::size_t>(B),
                             std::numeric_limits<double>::quiet_NaN());
  parallel_for(static_cast<std::size_t>(B), workers, [&](std::size_t bi) {
    const int b = static_cast<int>(bi);
    try {
      // One covariate round per replicate, shared by both refits.
      Eigen::MatrixXd cols1 = in.raw_columns;
      if (sim_cov) cols1 = simulate_columns(in, ctx1, master_seed, b, nullptr);
      Eigen::MatrixXd cols0 = in0.raw_columns;
      if (sim_cov && in0.upscaled_column >= 0)
        cols0.col(in0.upscaled_column) = cols1.col(in.upscaled_column);

      const Eigen::MatrixXd X0 = m0.scaler.design(cols0, m0.spec.intercept);
      rng::Stream ranef(master_seed, {rng::kLaneRanef, static_cast<std::uint64_t>(b)});
      rng::Stream noise(master_seed, {rng::kLaneNoise, static_cast<std::uint64_t>(b)});
      Eigen::VectorXd v(m), eps(m);
      for (Eigen::Index i = 0; i < m; ++i) v[i] = sd_v0 * ranef.normal();
      for (Eigen::Index i = 0; i < m; ++i) eps[i] = std::sqrt(in.v_eps[i]) * noise.normal();
      const Eigen::VectorXd u = (sar0 && ctx0.sar_lu) ? ctx0.sar_lu->solve(v).eval() : v;
      const Eigen::VectorXd y_star = X0 * m0.beta + u + eps;

      const Eigen::MatrixXd X1 = m1.scaler.design(cols1, m1.spec.intercept);
      const sfh::SfhFit f0 = refit(y_star, X0, in0, ctx0, m0.sigma2_v, m0.rho);
      const sfh::SfhFit f1 = refit(y_star, X1, in, ctx1, m1.sigma2_v, m1.rho);
      lstats[bi] = f1.loglik_restricted - f0.loglik_restricted;
    } catch (const std::exception&) {
      // left as NaN -> counted as failed
    }
  });

  LrTestResult res;
  res.parameter = parameter;
  res.l_obs = l_obs;
  res.B = B;
  long long ge = 0;
  for (double l : lstats) {
    if (std::isnan(l)) {
      ++res.n_failed;
      continue;
    }
    res.l_replicates.push_back(l);
    if (l >= l_obs) ++ge;
  }
  // l*_0 := l_obs enters both the count and the denominator.
  res.p_value = static_cast<double>(1 + ge) /
                static_cast<double>(1 + static_cast<long long>(res.l_replicates.size()));
  return res;
}

// ---------------------------------------------------------------------------

DiagnosticsBundle diagnostics_suite(const sfh::SfhFit& fit, const BootstrapRun* run,
                                    const BootstrapInputs& in,
                                    const std::vector<survey::DirectEstimate>& direct,
                                    const Eigen::VectorXd& mse_log, std::uint64_t master_seed,
                                    const DiagnosticsOptions& opts) {
  validate_inputs(in);
  DiagnosticsBundle out;
  const Eigen::Index m = in.y.size();
  const Eigen::MatrixXd X = fit.scaler.design(in.raw_columns, fit.spec.intercept);
  const Eigen::VectorXd eblups = sfh::eblup_all(fit, in.y, X);
  const Eigen::VectorXd synth = X * fit.beta;
  const auto msel = [&](Eigen::Index i) { return mse_log.size() == m ? mse_log[i] : 0.0; };

  std::map<std::string, const survey::DirectEstimate*> by_id;
  for (const auto& d : direct) by_id[d.region_id] = &d;
  const auto region_id = [&](Eigen::Index i) {
    return in.regions->regions[static_cast<std::size_t>(in.modeled[static_cast<std::size_t>(i)])].id;
  };

  // Q-Q panels: standardized sampling errors and random effects.
  {
    std::vector<std::pair<double, std::string>> resid, ranef;
    for (Eigen::Index i = 0; i < m; ++i) {
      resid.push_back({(in.y[i] - eblups[i]) / std::sqrt(in.v_eps[i]), region_id(i)});
      const double gii = fit.G(i, i);
      ranef.push_back({gii > 1e-300 ? (eblups[i] - synth[i]) / std::sqrt(gii) : 0.0, region_id(i)});
    }
    const auto qq = [&](std::vector<std::pair<double, std::string>> v,
                        std::vector<DiagnosticsBundle::QqPoint>& dst) {
      std::sort(v.begin(), v.end());
      for (std::size_t k = 0; k < v.size(); ++k) {
        const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(v.size());
        dst.push_back({v[k].second, normal_quantile(p), v[k].first});
      }
    };
    qq(resid, out.qq_residuals);
    qq(ranef, out.qq_ranef);
  }

  const double alpha = 1.0 - opts.level;

  // Bootstrap envelope of predicted totals (log scale) per area.
  if (run != nullptr) {
    for (Eigen::Index i = 0; i < m; ++i) {
      std::vector<double> vals;
      for (const auto& r : run->replicates)
        if (r.success)
          vals.push_back(std::log(in.n_pop[i]) + r.pred_log_mu[i] + 0.5 * msel(i));
      if (vals.size() < 2) continue;
      DiagnosticsBundle::EblupEnvRow row;
      row.region_id = region_id(i);
      row.actual_log_tau = std::log(in.n_pop[i]) + eblups[i] + 0.5 * msel(i);
      row.boot_mean = mean(vals);
      row.lo = quantile_type7(vals, alpha / 2.0);
      row.hi = quantile_type7(vals, 1.0 - alpha / 2.0);
      out.eblup_envelope.push_back(row);
    }
  }

  // Simulated point counts and trajectory variogram envelope.
  if (in.covariate_sim && opts.n_variogram_sims > 0) {
    Eigen::VectorXd data = in.grid_values;
    if (in.vario_log_scale) data = data.array().log();
    const sim::ConditionalSimulator cond(in.grid_locs, data, in.vario_model);

    geo::Point lo_pt, hi_pt;
    geo::set_bbox(*in.regions, lo_pt, hi_pt);
    const double max_lag = (hi_pt - lo_pt).norm() / 3.0;
    const vario::EmpiricalVariogram data_vario = vario::empirical_variogram(
        in.grid_locs, data, vario::Estimator::kRobust, max_lag, opts.variogram_bins);

    std::vector<double> counts_acc(static_cast<std::size_t>(m), 0.0);
    std::vector<std::vector<double>> env(data_vario.bins.size());
    for (int s = 0; s < opts.n_variogram_sims; ++s) {
      rng::Stream loc(master_seed, {rng::kLaneDiagnostics, 1, static_cast<std::uint64_t>(s)});
      rng::Stream fld(master_seed, {rng::kLaneDiagnostics, 2, static_cast<std::uint64_t>(s)});
      const geo::Locations pts =
          in.sim_buffer > 0.0
              ? geo::sample_uniform_buffered(*in.regions, in.n_sim_points, in.sim_buffer, loc)
              : geo::sample_uniform_locations(*in.regions, in.n_sim_points, loc);
      const Eigen::VectorXd traj = cond.simulate(pts, fld);  // Gaussian (log) scale
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto& reg =
            in.regions->regions[static_cast<std::size_t>(in.modeled[static_cast<std::size_t>(i)])];
        int c = 0;
        for (Eigen::Index p = 0; p < pts.rows(); ++p)
          if (geo::point_in_region(pts.row(p).transpose(), reg)) ++c;
        counts_acc[static_cast<std::size_t>(i)] += c;
      }
      const vario::EmpiricalVariogram sv = vario::empirical_variogram(
          pts, traj, vario::Estimator::kRobust, max_lag, opts.variogram_bins);
      for (std::size_t bidx = 0; bidx < data_vario.bins.size(); ++bidx) {
        for (const auto& sb : sv.bins) {
          if (std::abs(sb.lag - data_vario.bins[bidx].lag) < 1e-9) {
            env[bidx].push_back(sb.gamma);
            break;
          }
        }
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& reg =
          in.regions->regions[static_cast<std::size_t>(in.modeled[static_cast<std::size_t>(i)])];
      int actual = 0;
      for (Eigen::Index p = 0; p < in.grid_locs.rows(); ++p)
        if (geo::point_in_region(in.grid_locs.row(p).transpose(), reg)) ++actual;
      out.point_counts.push_back(
          {reg.id, static_cast<double>(actual),
           counts_acc[static_cast<std::size_t>(i)] / opts.n_variogram_sims});
    }
    for (std::size_t bidx = 0; bidx < data_vario.bins.size(); ++bidx) {
      if (env[bidx].size() < 2) continue;
      DiagnosticsBundle::VarioEnvRow row;
      row.lag = data_vario.bins[bidx].lag;
      row.gamma_data = data_vario.bins[bidx].gamma;
      row.lo = quantile_type7(env[bidx], 0.025);
      row.hi = quantile_type7(env[bidx], 0.975);
      row.inside = row.gamma_data >= row.lo && row.gamma_data <= row.hi;
      out.variogram_envelope.push_back(row);
    }
  }

  // Direct vs model precision and group aggregation.
  {
    double cv_d_sum = 0.0, cv_m_sum = 0.0;
    int n_cv = 0;
    std::map<std::string, DiagnosticsBundle::GroupRow> groups;
    std::map<std::string, std::vector<double>> group_reps;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& reg =
          in.regions->regions[static_cast<std::size_t>(in.modeled[static_cast<std::size_t>(i)])];
      const auto it = by_id.find(reg.id);
      const sfh::AreaPrediction pred = sfh::back_transform(
          reg.id, eblups[i], msel(i), mse_log.size() == m ? "bootstrap" : "deferred",
          in.n_pop[i]);
      DiagnosticsBundle::MseRow row;
      row.region_id = reg.id;
      row.rmse_model = pred.rmse_total;
      row.cv_model = pred.tau_hat > 0.0 ? pred.rmse_total / pred.tau_hat : 0.0;
      if (it != by_id.end() && it->second->usable && it->second->tau_tilde > 0.0) {
        row.var_direct = it->second->var_tau;
        row.cv_direct = std::sqrt(it->second->var_tau) / it->second->tau_tilde;
        cv_d_sum += row.cv_direct;
        cv_m_sum += row.cv_model;
        ++n_cv;
      }
      out.mse_comparison.push_back(row);

      const std::string g = reg.group_id.empty() ? "all" : reg.group_id;
      auto& grow = groups[g];
      grow.group = g;
      grow.model_sum += pred.tau_hat;
      if (it != by_id.end() && it->second->usable) grow.direct_sum += it->second->tau_tilde;
    }
    if (n_cv > 0) {
      out.cv_direct_avg = cv_d_sum / n_cv;
      out.cv_model_avg = cv_m_sum / n_cv;
      out.cv_reduction = 1.0 - out.cv_model_avg / out.cv_direct_avg;
    }

    if (run != nullptr) {
      for (const auto& r : run->replicates) {
        if (!r.success) continue;
        std::map<std::string, double> sums;
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto& reg = in.regions
                                ->regions[static_cast<std::size_t>(in.modeled[static_cast<std::size_t>(i)])];
          const std::string g = reg.group_id.empty() ? "all" : reg.group_id;
          sums[g] += in.n_pop[i] * std::exp(r.pred_log_mu[i] + 0.5 * msel(i));
        }
        for (const auto& [g, s] : sums) group_reps[g].push_back(s);
      }
    }
    for (auto& [g, row] : groups) {
      const auto it = group_reps.find(g);
      if (it != group_reps.end() && it->second.size() >= 2) {
        row.ci_lo = quantile_type7(it->second, alpha / 2.0);
        row.ci_hi = quantile_type7(it->second, 1.0 - alpha / 2.0);
      } else {
        row.ci_lo = row.ci_hi = std::numeric_limits<double>::quiet_NaN();
      }
      out.aggregation.push_back(row);
    }
  }
  return out;
}

}  // namespace sae::boot
