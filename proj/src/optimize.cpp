#include "sae/optimize.hpp"

#include <algorithm>
#include <vector>

namespace sae::opt {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double tol,
                             int max_evals) {
  const int n = static_cast<int>(x0.size());
  NelderMeadResult res;
  res.evaluations = 0;

  const auto clamp = [&](Eigen::VectorXd x) {
    for (int i = 0; i < n; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
  };
  const auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    return f(x);
  };

  std::vector<Eigen::VectorXd> pts;
  std::vector<double> vals;
  pts.push_back(clamp(x0));
  vals.push_back(eval(pts[0]));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = pts[0];
    x[i] += step[i];
    if (x[i] > hi[i]) x[i] = pts[0][i] - step[i];  // reflect off the box
    pts.push_back(clamp(x));
    vals.push_back(eval(pts.back()));
  }

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  std::vector<int> ord(pts.size());

  while (res.evaluations < max_evals) {
    for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = static_cast<int>(i);
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = ord.front(), worst = ord.back(), second_worst = ord[ord.size() - 2];

    if (vals[worst] - vals[best] < tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int id : ord)
      if (id != worst) centroid += pts[static_cast<std::size_t>(id)];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = clamp(centroid + alpha * (centroid - pts[static_cast<std::size_t>(worst)]));
    const double fr = eval(xr);
    if (fr < vals[static_cast<std::size_t>(best)]) {
      const Eigen::VectorXd xe = clamp(centroid + gamma * (centroid - pts[static_cast<std::size_t>(worst)]));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[static_cast<std::size_t>(worst)] = xe;
        vals[static_cast<std::size_t>(worst)] = fe;
      } else {
        pts[static_cast<std::size_t>(worst)] = xr;
        vals[static_cast<std::size_t>(worst)] = fr;
      }
      continue;
    }
    if (fr < vals[static_cast<std::size_t>(second_worst)]) {
      pts[static_cast<std::size_t>(worst)] = xr;
      vals[static_cast<std::size_t>(worst)] = fr;
      continue;
    }
    const Eigen::VectorXd xc = clamp(centroid + rho * (pts[static_cast<std::size_t>(worst)] - centroid));
    const double fc = eval(xc);
    if (fc < vals[static_cast<std::size_t>(worst)]) {
      pts[static_cast<std::size_t>(worst)] = xc;
      vals[static_cast<std::size_t>(worst)] = fc;
      continue;
    }
    for (int id : ord) {  // shrink toward best
      if (id == best) continue;
      pts[static_cast<std::size_t>(id)] =
          clamp(pts[static_cast<std::size_t>(best)] +
                sigma * (pts[static_cast<std::size_t>(id)] - pts[static_cast<std::size_t>(best)]));
      vals[static_cast<std::size_t>(id)] = eval(pts[static_cast<std::size_t>(id)]);
    }
  }

  int best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] < vals[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  res.x = pts[static_cast<std::size_t>(best)];
  res.value = vals[static_cast<std::size_t>(best)];
  return res;
}

}  // namespace sae::opt
