#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sae/rng.hpp"

namespace sae::geo {

using Point = Eigen::Vector2d;
/// Row-per-point location matrix shared by all spatial modules.
using Locations = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Closed planar ring stored without the repeated closing vertex.
using Ring = std::vector<Point>;

struct Region {
  std::string id;
  std::vector<Ring> rings;  // rings[0] outer, the rest holes
  long long population_count = 0;
  std::string group_id;  // optional coarse aggregation label

  const Ring& outer() const { return rings.front(); }
};

struct RegionSet {
  std::vector<Region> regions;
  std::string crs_note;

  int size() const { return static_cast<int>(regions.size()); }
  int index_of(const std::string& id) const;  // -1 if absent
};

/// Row-standardized spatial contiguity. raw(i,j) = 1 when i~j (symmetric,
/// zero diagonal); w divides each raw row by the chosen neighbor count.
struct ContiguityMatrix {
  Eigen::MatrixXd w;
  std::vector<std::vector<int>> neighbor_sets;
  std::vector<int> islands;  // regions with no neighbor (zero row in w)
};

struct BlockQuadrature {
  std::string region_id;
  Locations nodes;
  Eigen::VectorXd weights;  // positive, sums to 1
};

enum class AdjacencyRule { kSharedEdge, kSharedPoint };

struct AdjacencyOptions {
  AdjacencyRule rule = AdjacencyRule::kSharedEdge;
  double snap_tolerance = 1e-6;  // map units; absorbs boundary jitter
};

// -- ring/polygon primitives ------------------------------------------------

double ring_area(const Ring& ring);  // signed shoelace area
double region_area(const Region& region);
Point region_centroid(const Region& region);
void region_bbox(const Region& region, Point& lo, Point& hi);
void set_bbox(const RegionSet& regions, Point& lo, Point& hi);

/// Even-odd membership; points on the boundary count as inside.
bool point_in_region(const Point& p, const Region& region);

double point_segment_distance(const Point& p, const Point& a, const Point& b);
/// 0 for points inside any region, else distance to the nearest boundary.
double distance_to_union(const Point& p, const RegionSet& regions);

// -- spec operations ---------------------------------------------------------

/// Pairwise adjacency under `rule`, symmetric by construction, then
/// row-standardized. Islands keep a zero row and are reported.
ContiguityMatrix build_contiguity(const RegionSet& regions, const AdjacencyOptions& opts = {});

/// Restriction of a full-universe contiguity to `keep` (ascending region
/// indices). Neighbor counts still use the full universe, so rows that lost
/// neighbors sum to less than one; this is the `all_regions` adjacency
/// universe.
ContiguityMatrix subset_contiguity(const ContiguityMatrix& full, const std::vector<int>& keep);

/// Regular grid clipped to the polygon with uniform weights; refines the
/// grid until at least 4 nodes land inside.
BlockQuadrature discretize_block(const Region& region, double target_density);

/// `count` points uniform over the union of polygons (bounding-box rejection
/// sampling). Deterministic given the stream.
Locations sample_uniform_locations(const RegionSet& regions, int count, rng::Stream& stream);

/// Same sampler but accepting points within `buffer` distance of the union
/// (used when simulation should cover the buffered study area).
Locations sample_uniform_buffered(const RegionSet& regions, int count, double buffer,
                                  rng::Stream& stream);

}  // namespace sae::geo
