#include "sae/variogram.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sae/kriging.hpp"

namespace sae::vario {

Family family_from_string(const std::string& s) {
  if (s == "matern") return Family::kMatern;
  if (s == "exponential") return Family::kExponential;
  if (s == "spherical") return Family::kSpherical;
  throw std::runtime_error("unknown variogram family '" + s + "'");
}

std::string to_string(Family f) {
  switch (f) {
    case Family::kMatern: return "matern";
    case Family::kExponential: return "exponential";
    case Family::kSpherical: return "spherical";
  }
  return "?";
}

namespace {

/// Unit-sill correlation deficit g(h) with g(0)=0 and g(inf)=1.
double unit_shape(double h, Family family, double range, double nu) {
  if (h <= 0.0) return 0.0;
  const double x = h / range;
  switch (family) {
    case Family::kExponential:
      return 1.0 - std::exp(-x);
    case Family::kSpherical:
      return x >= 1.0 ? 1.0 : 1.5 * x - 0.5 * x * x * x;
    case Family::kMatern: {
      if (x < 1e-10) return 0.0;
      if (x > 600.0) return 1.0;  // Bessel K underflows; sill reached
      const double corr =
          std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) * std::cyl_bessel_k(nu, x);
      return std::clamp(1.0 - corr, 0.0, 1.0);
    }
  }
  return 0.0;
}

}  // namespace

double gamma_at(double h, const VariogramModel& model) {
  if (h < 0.0) throw std::invalid_argument("gamma_at: negative lag");
  if (h == 0.0) return 0.0;
  return model.nugget + model.partial_sill * unit_shape(h, model.family, model.range,
                                                        model.smoothness);
}

EmpiricalVariogram empirical_variogram(const geo::Locations& locs, const Eigen::VectorXd& values,
                                       Estimator kind, double max_lag, int n_bins) {
  const Eigen::Index n = locs.rows();
  if (n < 2) throw std::invalid_argument("empirical_variogram: need at least 2 points");
  if (values.size() != n) throw std::invalid_argument("empirical_variogram: size mismatch");
  if (!(max_lag > 0.0)) throw std::invalid_argument("empirical_variogram: max_lag must be > 0");
  if (n_bins < 1) throw std::invalid_argument("empirical_variogram: n_bins must be >= 1");

  const double width = max_lag / n_bins;
  std::vector<double> acc(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<long long> cnt(static_cast<std::size_t>(n_bins), 0);

  bool any_distinct = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (locs.row(i) - locs.row(j)).norm();
      if (d > 0.0) any_distinct = true;
      if (d <= 0.0 || d > max_lag) continue;
      auto b = static_cast<int>(d / width);
      if (b >= n_bins) b = n_bins - 1;  // d == max_lag
      const double diff = values[i] - values[j];
      acc[static_cast<std::size_t>(b)] +=
          (kind == Estimator::kClassical) ? diff * diff : std::sqrt(std::abs(diff));
      ++cnt[static_cast<std::size_t>(b)];
    }
  }
  if (!any_distinct) throw std::runtime_error("empirical_variogram: all points coincident");

  EmpiricalVariogram out;
  out.estimator = kind;
  out.max_lag = max_lag;
  out.bin_width = width;
  for (int b = 0; b < n_bins; ++b) {
    const long long m = cnt[static_cast<std::size_t>(b)];
    if (m == 0) continue;
    const double nm = static_cast<double>(m);
    double g;
    if (kind == Estimator::kClassical) {
      g = acc[static_cast<std::size_t>(b)] / (2.0 * nm);
    } else {
      // Cressie-Hawkins: fourth power of the mean square-root difference,
      // bias-corrected for Gaussian data.
      const double mean_root = acc[static_cast<std::size_t>(b)] / nm;
      const double corr = 0.457 + 0.494 / nm + 0.045 / (nm * nm);
      g = std::pow(mean_root, 4.0) / (2.0 * corr);
    }
    out.bins.push_back({(b + 0.5) * width, g, m});
  }
  if (out.bins.empty())
    throw std::runtime_error("empirical_variogram: no point pairs within max_lag");
  return out;
}

namespace {

struct LinearFit {
  double nugget = 0.0;
  double partial_sill = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

/// Nonnegative least squares over (nugget, partial_sill) for fixed shape
/// values g_i: the model is linear once range and smoothness are pinned.
LinearFit solve_linear(const std::vector<double>& gamma_hat, const std::vector<double>& g) {
  const std::size_t n = gamma_hat.size();
  double s1 = static_cast<double>(n), sg = 0.0, sgg = 0.0, sy = 0.0, sgy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sg += g[i];
    sgg += g[i] * g[i];
    sy += gamma_hat[i];
    sgy += g[i] * gamma_hat[i];
  }
  const auto sse_of = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = gamma_hat[i] - a - b * g[i];
      s += r * r;
    }
    return s;
  };

  LinearFit best;
  const double det = s1 * sgg - sg * sg;
  if (std::abs(det) > 1e-14 * std::max(1.0, s1 * sgg)) {
    const double a = (sy * sgg - sg * sgy) / det;
    const double b = (s1 * sgy - sg * sy) / det;
    if (a >= 0.0 && b >= 0.0) best = {a, b, sse_of(a, b)};
  }
  {
    const double b = sgg > 0.0 ? std::max(0.0, sgy / sgg) : 0.0;  // nugget pinned at 0
    const double s = sse_of(0.0, b);
    if (s < best.sse) best = {0.0, b, s};
  }
  {
    const double a = std::max(0.0, sy / s1);  // partial sill pinned at 0
    const double s = sse_of(a, 0.0);
    if (s < best.sse) best = {a, 0.0, s};
  }
  return best;
}

double golden_minimize(const std::function<double(double)>& f, double lo, double hi, int iters) {
  const double phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < iters; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    }
  }
  return f1 < f2 ? x1 : x2;
}

}  // namespace

double bin_residual(const EmpiricalVariogram& emp, const VariogramModel& model) {
  double s = 0.0;
  for (const auto& bin : emp.bins) {
    const double r = bin.gamma - gamma_at(bin.lag, model);
    s += r * r;
  }
  return s;
}

VariogramModel fit_ols(const EmpiricalVariogram& emp, Family family,
                       std::optional<double> fix_smoothness) {
  if (emp.bins.size() < 4) throw std::runtime_error("fit_ols: need at least 4 bins");

  std::vector<double> lags, gam;
  for (const auto& b : emp.bins) {
    lags.push_back(b.lag);
    gam.push_back(b.gamma);
  }
  const double h_min = lags.front();
  const double h_max = lags.back();

  std::vector<double> nus;
  if (family == Family::kMatern) {
    if (fix_smoothness) {
      if (*fix_smoothness <= 0.0) throw std::invalid_argument("fit_ols: smoothness must be > 0");
      nus = {*fix_smoothness};
    } else {
      nus = {0.5, 1.0, 1.5, 2.5};
    }
  } else {
    nus = {0.5};
  }

  VariogramModel best;
  double best_sse = std::numeric_limits<double>::infinity();
  bool found = false;

  for (double nu : nus) {
    const auto sse_at_range = [&](double r) {
      std::vector<double> g(lags.size());
      for (std::size_t i = 0; i < lags.size(); ++i) g[i] = unit_shape(lags[i], family, r, nu);
      return solve_linear(gam, g).sse;
    };

    // Multi-start over a log-spaced range grid, then a golden-section
    // polish of the best bracket.
    const double r_lo = h_min / 8.0;
    const double r_hi = h_max * 8.0;
    const int n_grid = 48;
    int best_k = -1;
    double grid_best = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<std::size_t>(n_grid));
    for (int k = 0; k < n_grid; ++k) {
      const double t = static_cast<double>(k) / (n_grid - 1);
      grid[static_cast<std::size_t>(k)] = r_lo * std::pow(r_hi / r_lo, t);
      const double s = sse_at_range(grid[static_cast<std::size_t>(k)]);
      if (s < grid_best) {
        grid_best = s;
        best_k = k;
      }
    }
    if (best_k < 0) continue;
    const double bracket_lo = grid[static_cast<std::size_t>(std::max(0, best_k - 1))];
    const double bracket_hi = grid[static_cast<std::size_t>(std::min(n_grid - 1, best_k + 1))];
    const double r_star = golden_minimize(sse_at_range, bracket_lo, bracket_hi, 120);

    std::vector<double> g(lags.size());
    for (std::size_t i = 0; i < lags.size(); ++i) g[i] = unit_shape(lags[i], family, r_star, nu);
    const LinearFit lin = solve_linear(gam, g);
    if (lin.sse < best_sse) {
      best_sse = lin.sse;
      best = {family, lin.nugget, lin.partial_sill, r_star, nu};
      found = true;
    }
  }
  if (!found || !std::isfinite(best_sse))
    throw std::runtime_error("fit_ols: optimizer failed on all starts (best residual " +
                             std::to_string(best_sse) + ")");
  return best;
}

CvCurve cv_neighborhood(const geo::Locations& locs, const Eigen::VectorXd& values,
                        const VariogramModel& model, const std::vector<int>& candidates,
                        int folds, rng::Stream& stream) {
  const Eigen::Index n = locs.rows();
  if (candidates.empty()) throw std::invalid_argument("cv_neighborhood: no candidates");
  if (folds < 2) throw std::invalid_argument("cv_neighborhood: folds must be >= 2");
  if (n < folds) throw std::invalid_argument("cv_neighborhood: fewer points than folds");

  // Deterministic fold assignment: shuffle, deal round-robin.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[stream.below(i + 1)]);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < order.size(); ++k)
    fold_of[static_cast<std::size_t>(order[k])] = static_cast<int>(k % static_cast<std::size_t>(folds));

  std::vector<Eigen::Index> fold_sizes(static_cast<std::size_t>(folds), 0);
  for (int f : fold_of) ++fold_sizes[static_cast<std::size_t>(f)];
  Eigen::Index min_train = n;
  for (Eigen::Index fs : fold_sizes) min_train = std::min(min_train, n - fs);

  std::set<int> uniq(candidates.begin(), candidates.end());

  CvCurve out;
  double best_rmse = std::numeric_limits<double>::infinity();
  for (int q : uniq) {
    out.candidates.push_back(q);
    if (q < 1 || q > min_train) {
      out.rmse.push_back(std::numeric_limits<double>::quiet_NaN());
      out.notes.push_back("skipped: neighborhood exceeds training fold");
      continue;
    }
    double sq = 0.0;
    long long cnt = 0;
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> train, test;
      for (Eigen::Index i = 0; i < n; ++i)
        (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
      geo::Locations tl(static_cast<Eigen::Index>(train.size()), 2);
      Eigen::VectorXd tv(static_cast<Eigen::Index>(train.size()));
      for (std::size_t k = 0; k < train.size(); ++k) {
        tl.row(static_cast<Eigen::Index>(k)) = locs.row(train[k]);
        tv[static_cast<Eigen::Index>(k)] = values[train[k]];
      }
      for (Eigen::Index i : test) {
        const auto sol = krige::point_krige(locs.row(i).transpose(), tl, tv, model, q);
        const double e = sol.prediction - values[i];
        sq += e * e;
        ++cnt;
      }
    }
    const double rmse = std::sqrt(sq / static_cast<double>(cnt));
    out.rmse.push_back(rmse);
    out.notes.emplace_back("");
    if (rmse < best_rmse - 1e-12) {  // ties keep the smaller (cheaper) size
      best_rmse = rmse;
      out.selected = q;
    }
  }
  if (out.selected == 0) throw std::runtime_error("cv_neighborhood: every candidate was skipped");
  return out;
}

}  // namespace sae::vario
