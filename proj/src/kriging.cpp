#include "sae/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sae::krige {

namespace {

/// q nearest cloud indices to `target`; distance ties break toward the
/// smaller input index so permuting equal points cannot change the result.
std::vector<int> nearest_indices(const geo::Point& target, const geo::Locations& locs, int q) {
  const Eigen::Index n = locs.rows();
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d2[i] = (locs.row(i).transpose() - target).squaredNorm();
  const auto cmp = [&](int a, int b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + (q - 1), idx.end(), cmp);
  idx.resize(static_cast<std::size_t>(q));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Bordered ordinary kriging solve: lhs is the neighbor semivariance matrix
/// with ones appended for the unbiasedness constraint.
Solution solve_system(const std::vector<int>& nbr, const geo::Locations& locs,
                      const Eigen::VectorXd& values, const vario::VariogramModel& model,
                      const Eigen::VectorXd& rhs_gamma) {
  const int q = static_cast<int>(nbr.size());
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(q + 1, q + 1);
  for (int i = 0; i < q; ++i) {
    for (int j = i + 1; j < q; ++j) {
      const double g = vario::gamma_at(
          (locs.row(nbr[static_cast<std::size_t>(i)]) - locs.row(nbr[static_cast<std::size_t>(j)]))
              .norm(),
          model);
      lhs(i, j) = lhs(j, i) = g;
    }
    lhs(i, q) = lhs(q, i) = 1.0;
  }
  Eigen::VectorXd rhs(q + 1);
  rhs.head(q) = rhs_gamma;
  rhs[q] = 1.0;

  const Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  if (!lu.isInvertible())
    throw std::runtime_error("kriging system is singular after deduplication");
  const Eigen::VectorXd sol = lu.solve(rhs);

  Solution out;
  out.weights = sol.head(q);
  out.lagrange = sol[q];
  out.neighbors = nbr;
  out.prediction = 0.0;
  for (int i = 0; i < q; ++i)
    out.prediction += out.weights[i] * values[nbr[static_cast<std::size_t>(i)]];
  // sigma^2 = sum(alpha_i * gamma_i0) + lagrange, minus the within-block
  // term for block targets (subtracted by the caller).
  out.variance = out.weights.dot(rhs_gamma) + out.lagrange;
  return out;
}

}  // namespace

Cloud dedupe_colocated(const geo::Locations& locs, const Eigen::VectorXd& values, double tol) {
  const Eigen::Index n = locs.rows();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (locs(a, 0) != locs(b, 0)) return locs(a, 0) < locs(b, 0);
    if (locs(a, 1) != locs(b, 1)) return locs(a, 1) < locs(b, 1);
    return a < b;
  });

  std::vector<int> group(static_cast<std::size_t>(n), -1);
  int n_groups = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int i = order[k];
    if (group[static_cast<std::size_t>(i)] >= 0) continue;
    group[static_cast<std::size_t>(i)] = n_groups;
    // Sweep forward while x stays within tol; merge anything within the
    // full Euclidean tolerance.
    for (std::size_t j = k + 1; j < order.size(); ++j) {
      const int cand = order[j];
      if (locs(cand, 0) - locs(i, 0) > tol) break;
      if (group[static_cast<std::size_t>(cand)] < 0 &&
          (locs.row(cand) - locs.row(i)).norm() <= tol)
        group[static_cast<std::size_t>(cand)] = n_groups;
    }
    ++n_groups;
  }

  // Representative location: first input index in the group (deterministic).
  Cloud out;
  out.locs.resize(n_groups, 2);
  out.values.resize(n_groups);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_groups);
  std::vector<int> rep(static_cast<std::size_t>(n_groups), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = group[static_cast<std::size_t>(i)];
    if (rep[static_cast<std::size_t>(g)] < 0 || i < rep[static_cast<std::size_t>(g)])
      rep[static_cast<std::size_t>(g)] = static_cast<int>(i);
  }
  std::vector<int> group_order(static_cast<std::size_t>(n_groups));
  std::iota(group_order.begin(), group_order.end(), 0);
  std::sort(group_order.begin(), group_order.end(),
            [&](int a, int b) { return rep[static_cast<std::size_t>(a)] < rep[static_cast<std::size_t>(b)]; });
  std::vector<int> new_id(static_cast<std::size_t>(n_groups));
  for (int k = 0; k < n_groups; ++k) new_id[static_cast<std::size_t>(group_order[static_cast<std::size_t>(k)])] = k;

  out.values.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = new_id[static_cast<std::size_t>(group[static_cast<std::size_t>(i)])];
    out.values[g] += values[i];
    counts[g] += 1.0;
  }
  for (int g = 0; g < n_groups; ++g) {
    out.locs.row(g) = locs.row(rep[static_cast<std::size_t>(group_order[static_cast<std::size_t>(g)])]);
    out.values[g] /= counts[g];
  }
  return out;
}

Solution point_krige(const geo::Point& target, const geo::Locations& locs,
                     const Eigen::VectorXd& values, const vario::VariogramModel& model, int q) {
  if (q < 1) throw std::invalid_argument("point_krige: q must be >= 1");
  if (q > kMaxNeighborhood) throw std::invalid_argument("point_krige: q exceeds supported maximum");
  const Cloud cloud = dedupe_colocated(locs, values);
  if (cloud.locs.rows() < q)
    throw std::runtime_error("point_krige: fewer than q distinct points available");

  const std::vector<int> nbr = nearest_indices(target, cloud.locs, q);
  Eigen::VectorXd rhs(q);
  for (int i = 0; i < q; ++i)
    rhs[i] = vario::gamma_at(
        (cloud.locs.row(nbr[static_cast<std::size_t>(i)]).transpose() - target).norm(), model);
  Solution sol = solve_system(nbr, cloud.locs, cloud.values, model, rhs);
  if (sol.variance < 0.0) sol.variance = 0.0;
  return sol;
}

double within_block_gamma(const geo::BlockQuadrature& quad, const vario::VariogramModel& model) {
  const Eigen::Index n = quad.nodes.rows();
  double s = 0.0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b)
      s += 2.0 * quad.weights[a] * quad.weights[b] *
           vario::gamma_at((quad.nodes.row(a) - quad.nodes.row(b)).norm(), model);
  return s;  // gamma(0) = 0 kills the diagonal terms
}

BlockPrediction block_krige(const geo::Region& region, const geo::BlockQuadrature& quad,
                            const geo::Locations& locs, const Eigen::VectorXd& values,
                            const vario::VariogramModel& model, int q, double gamma_vv) {
  if (q < 1) throw std::invalid_argument("block_krige: q must be >= 1");
  if (q > kMaxNeighborhood) throw std::invalid_argument("block_krige: q exceeds supported maximum");
  const Cloud cloud = dedupe_colocated(locs, values);
  if (cloud.locs.rows() < q)
    throw std::runtime_error("block_krige: fewer than q distinct points available");

  const geo::Point anchor = geo::region_centroid(region);
  const std::vector<int> nbr = nearest_indices(anchor, cloud.locs, q);

  Eigen::VectorXd rhs(q);
  for (int i = 0; i < q; ++i) {
    const auto row = cloud.locs.row(nbr[static_cast<std::size_t>(i)]);
    double g = 0.0;
    for (Eigen::Index a = 0; a < quad.nodes.rows(); ++a)
      g += quad.weights[a] * vario::gamma_at((quad.nodes.row(a) - row).norm(), model);
    rhs[i] = g;
  }
  Solution sol = solve_system(nbr, cloud.locs, cloud.values, model, rhs);

  if (gamma_vv < 0.0) gamma_vv = within_block_gamma(quad, model);
  BlockPrediction out;
  out.region_id = region.id;
  out.block_mean = sol.prediction;
  out.kriging_variance = std::max(0.0, sol.variance - gamma_vv);
  out.neighborhood = q;
  out.n_nodes = static_cast<int>(quad.nodes.rows());
  out.neighbor_ids = sol.neighbors;
  return out;
}

std::vector<BlockPrediction> upscale_all(const geo::RegionSet& regions,
                                         const std::vector<geo::BlockQuadrature>& quads,
                                         const geo::Locations& locs, const Eigen::VectorXd& values,
                                         const vario::VariogramModel& model, int q) {
  if (quads.size() != static_cast<std::size_t>(regions.size()))
    throw std::invalid_argument("upscale_all: one quadrature per region required");
  std::vector<BlockPrediction> out(quads.size());
  for (std::size_t i = 0; i < quads.size(); ++i) {
    try {
      out[i] = block_krige(regions.regions[i], quads[i], locs, values, model, q);
    } catch (const std::exception& e) {
      out[i] = {};
      out[i].region_id = regions.regions[i].id;
      out[i].ok = false;
      out[i].error = e.what();
    }
  }
  return out;
}

}  // namespace sae::krige
