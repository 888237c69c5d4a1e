#include "sae/sfh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "sae/optimize.hpp"

namespace sae::sfh {

RandomEffect random_effect_from_string(const std::string& s) {
  if (s == "independent") return RandomEffect::kIndependent;
  if (s == "sar") return RandomEffect::kSar;
  throw std::runtime_error("unknown random_effect '" + s + "'");
}

std::string to_string(RandomEffect re) {
  return re == RandomEffect::kIndependent ? "independent" : "sar";
}

Eigen::MatrixXd Scaler::design(const Eigen::MatrixXd& raw_columns, bool intercept) const {
  if (raw_columns.cols() != means.size())
    throw std::invalid_argument("Scaler: column count mismatch");
  const Eigen::Index m = raw_columns.rows();
  const Eigen::Index k = raw_columns.cols();
  Eigen::MatrixXd X(m, k + (intercept ? 1 : 0));
  Eigen::Index c = 0;
  if (intercept) X.col(c++).setOnes();
  for (Eigen::Index j = 0; j < k; ++j)
    X.col(c++) = (raw_columns.col(j).array() - means[j]) / sds[j];
  return X;
}

Design build_design(const Eigen::VectorXd& y, const Eigen::MatrixXd& raw_columns,
                    const std::vector<std::string>& names, const Eigen::VectorXd& v_eps,
                    const ModelSpec& spec) {
  const Eigen::Index m = y.size();
  if (raw_columns.rows() != m || v_eps.size() != m)
    throw std::invalid_argument("build_design: row count mismatch");
  if (static_cast<std::size_t>(raw_columns.cols()) != names.size())
    throw std::invalid_argument("build_design: name count mismatch");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!std::isfinite(y[i])) throw std::runtime_error("build_design: non-finite response");
    if (!(v_eps[i] > 0.0)) throw std::runtime_error("build_design: sampling variance must be > 0");
  }

  Design d;
  d.y = y;
  d.v_eps = v_eps;
  d.scaler.names = names;
  d.scaler.means.resize(raw_columns.cols());
  d.scaler.sds.resize(raw_columns.cols());
  for (Eigen::Index j = 0; j < raw_columns.cols(); ++j) {
    const double mean = raw_columns.col(j).mean();
    const double ss = (raw_columns.col(j).array() - mean).square().sum();
    if (m < 2) throw std::runtime_error("build_design: need at least 2 areas");
    const double sd = std::sqrt(ss / static_cast<double>(m - 1));
    if (sd <= 0.0)
      throw std::runtime_error("build_design: covariate '" + names[static_cast<std::size_t>(j)] +
                               "' is constant over modeled areas");
    d.scaler.means[j] = mean;
    d.scaler.sds[j] = sd;
  }
  d.X = d.scaler.design(raw_columns, spec.intercept);
  if (spec.intercept) d.column_names.push_back("intercept");
  d.column_names.insert(d.column_names.end(), names.begin(), names.end());
  return d;
}

Eigen::VectorXd gls_beta(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& V, const std::vector<std::string>* names) {
  const Eigen::Index k = X.cols();
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < k) {
    std::ostringstream msg;
    msg << "design matrix is rank deficient; collinear columns:";
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index p = qr.rank(); p < k; ++p) {
      const Eigen::Index col = perm[p];
      msg << ' ' << (names && col < static_cast<Eigen::Index>(names->size())
                         ? (*names)[static_cast<std::size_t>(col)]
                         : "col" + std::to_string(col));
    }
    throw std::runtime_error(msg.str());
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) throw std::runtime_error("gls_beta: V is not SPD");
  const Eigen::MatrixXd ViX = llt.solve(X);
  const Eigen::MatrixXd XtViX = X.transpose() * ViX;
  return XtViX.ldlt().solve(ViX.transpose() * y);
}

std::pair<double, double> rho_bounds(const Eigen::MatrixXd& W) {
  // W is similar to a symmetric matrix (row-standardized adjacency), so its
  // spectrum is real; tiny imaginary parts are numerical noise.
  const Eigen::EigenSolver<Eigen::MatrixXd> es(W, false);
  double lam_min = 0.0, lam_max = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double re = es.eigenvalues()[i].real();
    lam_min = std::min(lam_min, re);
    lam_max = std::max(lam_max, re);
  }
  const double lo = lam_min < -1e-12 ? 1.0 / lam_min + 1e-6 : -1e6;
  const double hi = lam_max > 1e-12 ? 1.0 / lam_max - 1e-6 : 1e6;
  return {lo, hi};
}

namespace {

/// Shared per-fit pieces: A(rho) = I - rho(W+W') + rho^2 WW' assembled from
/// two cached products.
struct SarWorkspace {
  Eigen::MatrixXd S;  // W + W'
  Eigen::MatrixXd P;  // W W'
  explicit SarWorkspace(const Eigen::MatrixXd& W) : S(W + W.transpose()), P(W * W.transpose()) {}
};

struct LoglikParts {
  double loglik = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd G;
  Eigen::MatrixXd V;
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_cov;
  bool ok = false;
};

LoglikParts eval_loglik(double sigma2_v, double rho, const Eigen::VectorXd& y,
                        const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                        const SarWorkspace* ws, bool want_factors) {
  const Eigen::Index m = y.size();
  LoglikParts out;

  Eigen::MatrixXd V;
  Eigen::MatrixXd G;
  if (ws == nullptr || sigma2_v == 0.0) {
    G = Eigen::MatrixXd::Identity(m, m) * sigma2_v;
    V = G;
  } else {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m) - rho * ws->S + (rho * rho) * ws->P;
    const Eigen::LLT<Eigen::MatrixXd> allt(A);
    if (allt.info() != Eigen::Success) return out;
    G = sigma2_v * allt.solve(Eigen::MatrixXd::Identity(m, m));
    G = 0.5 * (G + G.transpose());  // keep symmetry against roundoff
    V = G;
  }
  V.diagonal() += v_eps;

  const Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) return out;
  double logdet_v = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) logdet_v += 2.0 * std::log(llt.matrixLLT()(i, i));

  const Eigen::MatrixXd ViX = llt.solve(X);
  const Eigen::MatrixXd XtViX = X.transpose() * ViX;
  const Eigen::LLT<Eigen::MatrixXd> xllt(XtViX);
  if (xllt.info() != Eigen::Success) return out;
  double logdet_x = 0.0;
  for (Eigen::Index i = 0; i < XtViX.rows(); ++i)
    logdet_x += 2.0 * std::log(xllt.matrixLLT()(i, i));

  const Eigen::VectorXd beta = xllt.solve(ViX.transpose() * y);
  const Eigen::VectorXd r = y - X * beta;
  const double quad = r.dot(llt.solve(r));

  out.loglik = -0.5 * (logdet_v + logdet_x + quad);
  out.ok = std::isfinite(out.loglik);
  if (want_factors && out.ok) {
    out.G = std::move(G);
    out.V = std::move(V);
    out.beta = beta;
    out.beta_cov = xllt.solve(Eigen::MatrixXd::Identity(XtViX.rows(), XtViX.cols()));
  }
  return out;
}

}  // namespace

double restricted_loglik(double sigma2_v, double rho, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                         const Eigen::MatrixXd* W) {
  if (sigma2_v < 0.0) throw std::invalid_argument("restricted_loglik: sigma2_v must be >= 0");
  // Rank check up front so a collinear design fails loudly, not silently.
  gls_beta(y, X, Eigen::MatrixXd::Identity(y.size(), y.size()), nullptr);
  if (W == nullptr) {
    if (rho != 0.0) throw std::invalid_argument("restricted_loglik: rho requires W");
    const LoglikParts p = eval_loglik(sigma2_v, 0.0, y, X, v_eps, nullptr, false);
    if (!p.ok) throw std::runtime_error("restricted_loglik: V(theta) not SPD");
    return p.loglik;
  }
  const auto [lo, hi] = rho_bounds(*W);
  if (rho <= lo - 1e-12 || rho >= hi + 1e-12)
    throw std::invalid_argument("restricted_loglik: rho outside admissible interval");
  const SarWorkspace ws(*W);
  const LoglikParts p = eval_loglik(sigma2_v, rho, y, X, v_eps, &ws, false);
  if (!p.ok) throw std::runtime_error("restricted_loglik: V(theta) not SPD");
  return p.loglik;
}

SfhFit reml_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::VectorXd& v_eps,
                const Eigen::MatrixXd* W, const ModelSpec& spec, const RemlOptions& opts) {
  const Eigen::Index m = y.size();
  const Eigen::Index k = X.cols();
  if (m < k + 2) throw std::runtime_error("reml_fit: need at least k + 2 modeled areas");
  const bool sar = spec.random_effect == RandomEffect::kSar;
  if (sar && W == nullptr) throw std::invalid_argument("reml_fit: SAR effects need W");

  std::vector<std::string> col_names;
  if (spec.intercept) col_names.push_back("intercept");
  col_names.insert(col_names.end(), spec.covariates.begin(), spec.covariates.end());
  if (static_cast<Eigen::Index>(col_names.size()) != k) {
    col_names.clear();
    for (Eigen::Index j = 0; j < k; ++j) col_names.push_back("col" + std::to_string(j));
  }

  // Scale hint from OLS residuals for starts and the box.
  const Eigen::VectorXd beta_ols =
      gls_beta(y, X, Eigen::MatrixXd::Identity(m, m), &col_names);
  const Eigen::VectorXd r0 = y - X * beta_ols;
  const double s2 =
      std::max(1e-8, r0.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, m - k)));
  const double sigma_hi = 50.0 * (s2 + v_eps.mean());

  double rho_lo = 0.0, rho_hi = 0.0;
  std::unique_ptr<SarWorkspace> ws;
  if (sar) {
    const auto bounds = opts.rho_interval ? *opts.rho_interval : rho_bounds(*W);
    rho_lo = bounds.first;
    rho_hi = bounds.second;
    ws = std::make_unique<SarWorkspace>(*W);
  }

  const auto objective = [&](const Eigen::VectorXd& t) {
    const double sv = t[0];
    const double rho = sar ? t[1] : 0.0;
    const LoglikParts p = eval_loglik(sv, rho, y, X, v_eps, ws.get(), false);
    return p.ok ? -p.loglik : std::numeric_limits<double>::max();
  };

  std::vector<std::pair<double, double>> starts = opts.warm_starts;
  {
    const std::vector<std::pair<double, double>> grid = {{0.5 * s2, 0.0},
                                                         {0.1 * s2, 0.6 * rho_hi},
                                                         {1.0 * s2, 0.6 * rho_lo},
                                                         {0.02 * s2, 0.9 * rho_hi},
                                                         {2.0 * s2, 0.3 * rho_hi}};
    for (int i = 0; i < opts.n_starts && i < static_cast<int>(grid.size()); ++i)
      starts.push_back(grid[static_cast<std::size_t>(i)]);
  }

  const int dim = sar ? 2 : 1;
  Eigen::VectorXd lo(dim), hi(dim);
  lo[0] = 0.0;
  hi[0] = sigma_hi;
  if (sar) {
    lo[1] = rho_lo;
    hi[1] = rho_hi;
  }

  opt::NelderMeadResult best;
  best.value = std::numeric_limits<double>::max();
  bool any_converged = false;
  int total_evals = 0;
  for (const auto& [sv0, rho0] : starts) {
    Eigen::VectorXd x0(dim), step(dim);
    x0[0] = std::clamp(sv0, 0.0, sigma_hi);
    step[0] = std::max(0.25 * s2, 1e-6);
    if (sar) {
      x0[1] = std::clamp(rho0, rho_lo, rho_hi);
      step[1] = 0.2 * (rho_hi - rho_lo) / 2.0;
    }
    const auto res = opt::nelder_mead(objective, x0, step, lo, hi, opts.tol,
                                      opts.max_evals_per_start);
    total_evals += res.evaluations;
    any_converged = any_converged || res.converged;
    if (res.value < best.value) best = res;
  }
  if (!any_converged || best.value == std::numeric_limits<double>::max()) {
    std::ostringstream msg;
    msg << "reml_fit: no start converged; best objective " << best.value << " at sigma2_v="
        << (best.x.size() ? best.x[0] : 0.0);
    throw std::runtime_error(msg.str());
  }

  double sigma2_hat = best.x[0];
  double rho_hat = sar ? best.x[1] : 0.0;

  // Probe the sigma2 = 0 boundary explicitly; NM can stall just above it,
  // and a gap below the convergence tolerance is not a real optimum.
  {
    Eigen::VectorXd t0(dim);
    t0[0] = 0.0;
    if (sar) t0[1] = rho_hat;
    const double f0 = objective(t0);
    if (f0 <= best.value + opts.tol) {
      sigma2_hat = 0.0;
      best.value = std::min(best.value, f0);
    }
  }

  const LoglikParts fin = eval_loglik(sigma2_hat, rho_hat, y, X, v_eps, ws.get(), true);
  if (!fin.ok) throw std::runtime_error("reml_fit: V not SPD at reported optimum");

  SfhFit fit;
  fit.spec = spec;
  fit.beta_names = col_names;
  fit.beta = fin.beta;
  fit.beta_cov = fin.beta_cov;
  fit.sigma2_v = sigma2_hat;
  fit.rho = sar ? rho_hat : 0.0;
  fit.loglik_restricted = fin.loglik;
  fit.boundary_sigma2 = sigma2_hat <= 1e-8 * (s2 + v_eps.mean());
  fit.convergence = {true, total_evals, static_cast<int>(starts.size()), best.value};
  fit.v_eps = v_eps;
  fit.G = fin.G;
  fit.V = fin.V;
  fit.V_llt.compute(fin.V);
  fit.rho_min = rho_lo;
  fit.rho_max = rho_hi;
  return fit;
}

Eigen::VectorXd eblup_all(const SfhFit& fit, const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  const Eigen::VectorXd r = y - X * fit.beta;
  return X * fit.beta + fit.G * fit.V_llt.solve(r);
}

double eblup(const SfhFit& fit, const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int area) {
  if (area < 0 || area >= y.size()) throw std::out_of_range("eblup: area index");
  return eblup_all(fit, y, X)[area];
}

Eigen::VectorXd naive_mse_log(const SfhFit& fit) {
  const Eigen::MatrixXd GVG = fit.G * fit.V_llt.solve(fit.G);
  return (fit.G - GVG).diagonal().cwiseMax(0.0);
}

AreaPrediction back_transform(const std::string& region_id, double eblup_log, double mse_log,
                              const std::string& mse_source, double population_count) {
  if (mse_log < 0.0) throw std::invalid_argument("back_transform: mse_log must be >= 0");
  AreaPrediction p;
  p.region_id = region_id;
  p.eblup_log = eblup_log;
  p.mse_log = mse_log;
  p.mse_source = mse_source;
  p.mu_hat = std::exp(eblup_log + 0.5 * mse_log);
  p.tau_hat = population_count * p.mu_hat;
  p.rmse_total = p.tau_hat * std::sqrt(std::expm1(mse_log));
  return p;
}

}  // namespace sae::sfh
