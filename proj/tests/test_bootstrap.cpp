#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sae/bootstrap.hpp"
#include "sae/numeric.hpp"
#include "sae/pipeline.hpp"

using namespace sae;

namespace {

struct Setup {
  sim::SyntheticScenario scen;
  boot::BootstrapInputs in;
  sfh::SfhFit fit;
};

/// Model-mode scenario wired into bootstrap inputs; `noise_scale` shrinks the
/// sampling variances for degenerate-limit tests.
Setup make_setup(int rows, int cols, double beta1, std::uint64_t seed, bool covariate_sim,
                 double noise_scale = 1.0, double sigma2_v = 0.2) {
  Setup s;
  sim::ScenarioConfig cfg;
  cfg.rows = rows;
  cfg.cols = cols;
  cfg.mode = "model";
  cfg.beta1 = beta1;
  cfg.sigma2_v = sigma2_v;
  if (noise_scale != 1.0) {
    cfg.ve_min = 1e-10;
    cfg.ve_max = 2e-10;
  }
  s.scen = sim::make_scenario(cfg, seed);

  const int m = s.scen.regions.size();
  auto& in = s.in;
  in.regions = &s.scen.regions;
  for (int i = 0; i < m; ++i) in.modeled.push_back(i);
  in.W = geo::build_contiguity(s.scen.regions).w;
  in.y.resize(m);
  in.v_eps.resize(m);
  in.n_pop.resize(m);
  for (int i = 0; i < m; ++i) {
    in.y[i] = s.scen.direct[static_cast<std::size_t>(i)].log_mu_tilde;
    in.v_eps[i] = s.scen.direct[static_cast<std::size_t>(i)].var_log;
    in.n_pop[i] = static_cast<double>(cfg.units_per_area);
  }
  in.raw_columns = s.scen.x_raw;
  in.column_names = {"block_mean"};
  in.upscaled_column = 0;
  in.spec.covariates = in.column_names;
  in.spec.random_effect = sfh::RandomEffect::kSar;
  in.spec.intercept = true;
  in.covariate_sim = covariate_sim;
  if (covariate_sim) {
    in.vario_model = cfg.field;
    in.vario_log_scale = true;
    in.grid_locs = s.scen.grid_locs;
    in.grid_values = s.scen.grid_values;
    for (int i : in.modeled)
      in.quads.push_back(
          geo::discretize_block(s.scen.regions.regions[static_cast<std::size_t>(i)], 25.0));
    in.krige_q = 10;
    in.n_sim_points = 80;
  }

  const sfh::Design d = sfh::build_design(in.y, in.raw_columns, in.column_names, in.v_eps,
                                          in.spec);
  s.fit = sfh::reml_fit(d.y, d.X, d.v_eps, &in.W, in.spec);
  s.fit.scaler = d.scaler;
  s.fit.beta_names = d.column_names;
  return s;
}

boot::BootstrapRun toy_run(const std::vector<double>& values) {
  boot::BootstrapRun run;
  run.B = static_cast<int>(values.size());
  for (double v : values) {
    boot::ReplicateRecord r;
    r.success = true;
    r.beta = Eigen::VectorXd::Constant(1, v);
    r.sigma2_v = v;
    r.rho = 0.0;
    r.true_log_mu = Eigen::VectorXd::Zero(2);
    r.pred_log_mu = Eigen::VectorXd::Zero(2);
    run.replicates.push_back(r);
    ++run.n_success;
  }
  return run;
}

sfh::SfhFit toy_fit() {
  sfh::SfhFit fit;
  fit.spec.random_effect = sfh::RandomEffect::kIndependent;
  fit.beta = Eigen::VectorXd::Constant(1, 2.0);
  fit.beta_names = {"x"};
  fit.sigma2_v = 2.0;
  return fit;
}

}  // namespace

TEST_CASE("replicates {1,2,3}: SE 1 and type-7 percentile interval") {
  const auto run = toy_run({1.0, 2.0, 3.0});
  const auto fit = toy_fit();
  const auto params = boot::summarize_se_ci(fit, run, 0.95);
  REQUIRE(params.size() >= 2);
  CHECK(params[0].name == "x");
  CHECK(params[0].se == doctest::Approx(1.0));
  CHECK(params[0].ci_lo == doctest::Approx(1.05));
  CHECK(params[0].ci_hi == doctest::Approx(2.95));
}

TEST_CASE("constant replicates give SE 0 and a degenerate interval") {
  const auto run = toy_run({4.2, 4.2, 4.2, 4.2});
  const auto params = boot::summarize_se_ci(toy_fit(), run, 0.95);
  CHECK(params[0].se == doctest::Approx(0.0));
  CHECK(params[0].ci_lo == doctest::Approx(4.2));
  CHECK(params[0].ci_hi == doctest::Approx(4.2));
}

TEST_CASE("lower level gives a narrower interval") {
  std::vector<double> vals;
  rng::Stream st(12);
  for (int i = 0; i < 200; ++i) vals.push_back(st.normal());
  const auto run = toy_run(vals);
  const auto wide = boot::summarize_se_ci(toy_fit(), run, 0.95);
  const auto narrow = boot::summarize_se_ci(toy_fit(), run, 0.5);
  CHECK(narrow[0].ci_hi - narrow[0].ci_lo < wide[0].ci_hi - wide[0].ci_lo);
  // Replicate median sits inside the interval for level >= 0.5.
  const double med = quantile_type7(vals, 0.5);
  CHECK(narrow[0].ci_lo <= med);
  CHECK(narrow[0].ci_hi >= med);
}

TEST_CASE("bootstrap MSE: exact cases and order invariance") {
  boot::BootstrapRun run;
  run.B = 2;
  boot::ReplicateRecord a;
  a.success = true;
  a.true_log_mu = Eigen::VectorXd::Zero(2);
  a.pred_log_mu = Eigen::VectorXd::Zero(2);
  boot::ReplicateRecord b = a;
  b.pred_log_mu << 0.3, 0.0;
  run.replicates = {a, b};
  run.n_success = 2;
  const Eigen::VectorXd mse = boot::mse_eblup(run);
  CHECK(mse[0] == doctest::Approx((0.3 * 0.3) / 2.0));
  CHECK(mse[1] == doctest::Approx(0.0));

  std::swap(run.replicates[0], run.replicates[1]);
  const Eigen::VectorXd mse2 = boot::mse_eblup(run);
  CHECK((mse - mse2).cwiseAbs().maxCoeff() == 0.0);

  boot::BootstrapRun single;
  single.B = 1;
  single.replicates = {b};
  single.n_success = 1;
  CHECK(boot::mse_eblup(single)[0] == doctest::Approx(0.09));
}

TEST_CASE("B = 1 stores one parameter tuple and flags undefined SEs") {
  auto s = make_setup(3, 3, 0.61, 11, false);
  const auto run = boot::run_algorithm1(s.fit, s.in, 1, 2024, 1);
  CHECK(run.B == 1);
  CHECK(run.n_success == 1);
  const auto params = boot::summarize_se_ci(s.fit, run, 0.95);
  CHECK(std::isnan(params[0].se));
  CHECK(std::isnan(params[0].ci_lo));
}

TEST_CASE("degenerate noise limit: replicate estimates collapse onto the fit") {
  auto s = make_setup(3, 3, 0.61, 13, false, /*noise_scale=*/1e-9, /*sigma2_v=*/1e-10);
  const auto run = boot::run_algorithm1(s.fit, s.in, 20, 99, 1);
  CHECK(run.n_success == 20);
  const auto params = boot::summarize_se_ci(s.fit, run, 0.95);
  for (const auto& p : params) {
    if (p.name == "sigma2_v" || p.name == "rho") continue;
    CHECK(std::abs(p.estimate - s.fit.beta[p.name == "intercept" ? 0 : 1]) < 1e-4);
    CHECK(p.se < 1e-4);
  }
}

TEST_CASE("fixed seed => identical replicates across worker counts") {
  auto s = make_setup(4, 4, 0.61, 17, true);
  const auto r1 = boot::run_algorithm1(s.fit, s.in, 12, 555, 1);
  const auto r4 = boot::run_algorithm1(s.fit, s.in, 12, 555, 4);
  const auto r8 = boot::run_algorithm1(s.fit, s.in, 12, 555, 8);
  REQUIRE(r1.n_success == r4.n_success);
  REQUIRE(r1.n_success == r8.n_success);
  for (int b = 0; b < 12; ++b) {
    const auto& a = r1.replicates[static_cast<std::size_t>(b)];
    const auto& c = r4.replicates[static_cast<std::size_t>(b)];
    const auto& d = r8.replicates[static_cast<std::size_t>(b)];
    REQUIRE(a.success);
    CHECK((a.beta - c.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.beta - d.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.sigma2_v == c.sigma2_v);
    CHECK(a.rho == d.rho);
    CHECK((a.pred_log_mu - c.pred_log_mu).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.block_means - d.block_means).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("covariate rounds vary the design across replicates") {
  auto s = make_setup(3, 3, 0.61, 19, true);
  const auto run = boot::run_algorithm1(s.fit, s.in, 6, 31, 2);
  REQUIRE(run.n_success >= 5);
  bool varies = false;
  const Eigen::VectorXd base = run.replicates[0].block_means;
  for (const auto& r : run.replicates)
    if (r.success && (r.block_means - base).cwiseAbs().maxCoeff() > 1e-9) varies = true;
  CHECK(varies);
}

TEST_CASE("LR test of rho is nested: nonnegative statistic and valid p") {
  auto s = make_setup(4, 4, 0.61, 23, false);
  const auto res = boot::run_algorithm2(s.in, "rho", 19, 777, 2);
  CHECK(res.l_obs >= -1e-8);
  CHECK(res.p_value >= 1.0 / 20.0 - 1e-12);
  CHECK(res.p_value <= 1.0);
  // p is a multiple of 1/(n_success+1).
  const double unit = 1.0 / (static_cast<double>(res.l_replicates.size()) + 1.0);
  const double k = res.p_value / unit;
  CHECK(std::abs(k - std::round(k)) < 1e-9);
}

TEST_CASE("LR test under a strong covariate signal rejects at the floor") {
  auto s = make_setup(4, 4, /*beta1=*/2.5, 29, false);
  const auto res = boot::run_algorithm2(s.in, "block_mean", 19, 888, 2);
  CHECK(res.n_failed == 0);
  CHECK(res.p_value == doctest::Approx(1.0 / 20.0));
}

TEST_CASE("LR test propagates unknown parameter names") {
  auto s = make_setup(3, 3, 0.61, 31, false);
  CHECK_THROWS_WITH_AS(boot::run_algorithm2(s.in, "nope", 9, 1, 1),
                       doctest::Contains("unknown parameter"), std::invalid_argument);
}

TEST_CASE("diagnostics: Q-Q inside the Monte Carlo normal band, panels coherent") {
  auto s = make_setup(6, 6, 0.61, 37, true);
  const auto run = boot::run_algorithm1(s.fit, s.in, 60, 4141, 2);
  const Eigen::VectorXd mse = boot::mse_eblup(run);

  std::vector<survey::DirectEstimate> direct = s.scen.direct;
  boot::DiagnosticsOptions opts;
  opts.n_variogram_sims = 40;
  const auto bundle =
      boot::diagnostics_suite(s.fit, &run, s.in, direct, mse, 818, opts);

  const int m = s.scen.regions.size();
  REQUIRE(static_cast<int>(bundle.qq_residuals.size()) == m);
  REQUIRE(static_cast<int>(bundle.qq_ranef.size()) == m);

  // Envelope rows bracket their mean; aggregation is additive.
  for (const auto& row : bundle.eblup_envelope) {
    CHECK(row.lo <= row.boot_mean + 1e-12);
    CHECK(row.hi >= row.boot_mean - 1e-12);
  }
  double tau_total = 0.0;
  {
    const Eigen::MatrixXd X = s.fit.scaler.design(s.in.raw_columns, true);
    const Eigen::VectorXd ebl = sfh::eblup_all(s.fit, s.in.y, X);
    for (Eigen::Index i = 0; i < mse.size(); ++i)
      tau_total += s.in.n_pop[i] * std::exp(ebl[i] + 0.5 * mse[i]);
  }
  double group_total = 0.0;
  for (const auto& g : bundle.aggregation) group_total += g.model_sum;
  CHECK(group_total == doctest::Approx(tau_total).epsilon(1e-12));

  // Point counts: actual grid counts verified directly.
  REQUIRE(static_cast<int>(bundle.point_counts.size()) == m);
  for (const auto& row : bundle.point_counts) {
    const int idx = s.scen.regions.index_of(row.region_id);
    int actual = 0;
    for (Eigen::Index p = 0; p < s.scen.grid_locs.rows(); ++p)
      if (geo::point_in_region(s.scen.grid_locs.row(p).transpose(),
                               s.scen.regions.regions[static_cast<std::size_t>(idx)]))
        ++actual;
    CHECK(row.actual_points == doctest::Approx(actual));
    CHECK(row.mean_simulated > 0.0);
  }

  // Variogram envelope rows: ordered bounds, inside flag consistent.
  REQUIRE(!bundle.variogram_envelope.empty());
  for (const auto& row : bundle.variogram_envelope) {
    CHECK(row.lo <= row.hi);
    CHECK(row.inside == (row.gamma_data >= row.lo && row.gamma_data <= row.hi));
  }

  // CV comparison present for every area and the averages match.
  REQUIRE(static_cast<int>(bundle.mse_comparison.size()) == m);
  CHECK(bundle.cv_direct_avg > 0.0);
  CHECK(bundle.cv_model_avg > 0.0);
  CHECK(bundle.cv_reduction == doctest::Approx(1.0 - bundle.cv_model_avg / bundle.cv_direct_avg));
}

TEST_CASE("Gaussian synthetic residuals sit inside the Monte Carlo normal band") {
  // With sigma2_v ~ 0 on a large lattice the standardized sampling errors
  // are iid standard normal up to the two fitted coefficients, which is the
  // regime the Q-Q oracle is defined for.
  auto s = make_setup(14, 14, 0.61, 4711, false, 1.0, /*sigma2_v=*/1e-12);
  const auto bundle =
      boot::diagnostics_suite(s.fit, nullptr, s.in, s.scen.direct, Eigen::VectorXd(), 2, {});
  const int m = 14 * 14;
  REQUIRE(static_cast<int>(bundle.qq_residuals.size()) == m);

  // Pointwise 95% band for the order statistics of m standard normals.
  const int mc = 3000;
  std::vector<std::vector<double>> ranks(static_cast<std::size_t>(m));
  rng::Stream st(61);
  for (int rep = 0; rep < mc; ++rep) {
    std::vector<double> z(static_cast<std::size_t>(m));
    for (auto& v : z) v = st.normal();
    std::sort(z.begin(), z.end());
    for (int i = 0; i < m; ++i)
      ranks[static_cast<std::size_t>(i)].push_back(z[static_cast<std::size_t>(i)]);
  }
  std::vector<double> samples;
  for (const auto& p : bundle.qq_residuals) samples.push_back(p.sample);
  std::sort(samples.begin(), samples.end());
  int inside = 0;
  for (int i = 0; i < m; ++i) {
    auto& v = ranks[static_cast<std::size_t>(i)];
    std::sort(v.begin(), v.end());
    const double lo = v[static_cast<std::size_t>(0.025 * (mc - 1))];
    const double hi = v[static_cast<std::size_t>(std::ceil(0.975 * (mc - 1)))];
    if (samples[static_cast<std::size_t>(i)] >= lo && samples[static_cast<std::size_t>(i)] <= hi)
      ++inside;
  }
  CHECK(inside >= static_cast<int>(0.95 * m));
}

TEST_CASE("zero-noise run collapses the envelope onto the point estimates") {
  auto s = make_setup(3, 3, 0.61, 41, false, 1e-9, 1e-10);
  const auto run = boot::run_algorithm1(s.fit, s.in, 10, 3, 1);
  const Eigen::VectorXd mse = boot::mse_eblup(run);
  const auto bundle = boot::diagnostics_suite(s.fit, &run, s.in, s.scen.direct, mse, 5, {});
  for (const auto& row : bundle.eblup_envelope) {
    CHECK(row.hi - row.lo < 1e-4);
    CHECK(std::abs(row.boot_mean - row.actual_log_tau) < 1e-3);
  }
}
