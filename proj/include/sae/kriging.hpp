#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sae/geometry.hpp"
#include "sae/variogram.hpp"

namespace sae::krige {

/// Weights and Lagrange multiplier of one solved ordinary kriging system.
struct Solution {
  Eigen::VectorXd weights;       // alpha, sums to 1
  double lagrange = 0.0;
  std::vector<int> neighbors;    // indices into the (deduplicated) cloud
  double prediction = 0.0;
  double variance = 0.0;         // clamped at 0
};

struct BlockPrediction {
  std::string region_id;
  double block_mean = 0.0;
  double kriging_variance = 0.0;
  int neighborhood = 0;
  int n_nodes = 0;
  std::vector<int> neighbor_ids;
  bool ok = true;
  std::string error;  // set when ok == false (batch mode keeps going)
};

/// Point cloud with co-located observations merged by mean. All kriging
/// entry points run through this; duplicate sites make the bordered system
/// singular.
struct Cloud {
  geo::Locations locs;
  Eigen::VectorXd values;
};

Cloud dedupe_colocated(const geo::Locations& locs, const Eigen::VectorXd& values,
                       double tol = 1e-9);

/// Ordinary point kriging with the q nearest observations. Exact at data
/// sites when the nugget is zero. Ties in the neighbor search break toward
/// the smaller input index.
Solution point_krige(const geo::Point& target, const geo::Locations& locs,
                     const Eigen::VectorXd& values, const vario::VariogramModel& model, int q);

/// Mean semivariance between each cloud point and the block (quadrature
/// average), plus the within-block mean semivariance.
double within_block_gamma(const geo::BlockQuadrature& quad, const vario::VariogramModel& model);

/// Ordinary block kriging of the polygon average. Neighbors are the q
/// points nearest to the polygon centroid. Pass `gamma_vv` when the
/// within-block term was precomputed (it depends only on quadrature and
/// model), otherwise it is evaluated here.
BlockPrediction block_krige(const geo::Region& region, const geo::BlockQuadrature& quad,
                            const geo::Locations& locs, const Eigen::VectorXd& values,
                            const vario::VariogramModel& model, int q, double gamma_vv = -1.0);

/// Block kriging for every region in set order. Per-region failures are
/// recorded on the result instead of aborting the batch.
std::vector<BlockPrediction> upscale_all(const geo::RegionSet& regions,
                                         const std::vector<geo::BlockQuadrature>& quads,
                                         const geo::Locations& locs, const Eigen::VectorXd& values,
                                         const vario::VariogramModel& model, int q);

/// Largest supported local neighborhood.
inline constexpr int kMaxNeighborhood = 64;

}  // namespace sae::krige
