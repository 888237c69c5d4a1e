#include "sae/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sae::geo {

namespace {

struct BBox {
  Point lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  Point hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  void expand(const Point& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool overlaps(const BBox& o, double pad) const {
    return lo.x() - pad <= o.hi.x() && o.lo.x() - pad <= hi.x() && lo.y() - pad <= o.hi.y() &&
           o.lo.y() - pad <= hi.y();
  }
};

BBox bbox_of(const Region& r) {
  BBox b;
  for (const auto& ring : r.rings)
    for (const auto& p : ring) b.expand(p);
  return b;
}

// Collinear overlap of positive length between segments a and b, within a
// perpendicular snap tolerance. This is the shared-edge predicate; it is
// robust to boundaries being split into different segment counts.
bool segments_share_edge(const Point& a1, const Point& a2, const Point& b1, const Point& b2,
                         double tol) {
  const Point da = a2 - a1;
  const double len_a = da.norm();
  if (len_a <= tol) return false;
  const Point dir = da / len_a;
  const auto perp = [&](const Point& p) {
    const Point d = p - a1;
    return std::abs(dir.x() * d.y() - dir.y() * d.x());
  };
  if (perp(b1) > tol || perp(b2) > tol) return false;
  double t1 = dir.dot(b1 - a1);
  double t2 = dir.dot(b2 - a1);
  if (t1 > t2) std::swap(t1, t2);
  const double overlap = std::min(t2, len_a) - std::max(t1, 0.0);
  return overlap > tol;
}

double segment_segment_distance(const Point& a1, const Point& a2, const Point& b1,
                                const Point& b2) {
  const auto orient = [](const Point& p, const Point& q, const Point& r) {
    return (q.x() - p.x()) * (r.y() - p.y()) - (q.y() - p.y()) * (r.x() - p.x());
  };
  const double o1 = orient(a1, a2, b1), o2 = orient(a1, a2, b2);
  const double o3 = orient(b1, b2, a1), o4 = orient(b1, b2, a2);
  if (((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0))) return 0.0;  // proper crossing
  return std::min(std::min(point_segment_distance(b1, a1, a2), point_segment_distance(b2, a1, a2)),
                  std::min(point_segment_distance(a1, b1, b2), point_segment_distance(a2, b1, b2)));
}

bool regions_adjacent(const Region& a, const Region& b, const AdjacencyOptions& opts) {
  for (const auto& ring_a : a.rings) {
    const std::size_t na = ring_a.size();
    for (std::size_t i = 0; i < na; ++i) {
      const Point& p1 = ring_a[i];
      const Point& p2 = ring_a[(i + 1) % na];
      for (const auto& ring_b : b.rings) {
        const std::size_t nb = ring_b.size();
        for (std::size_t j = 0; j < nb; ++j) {
          const Point& q1 = ring_b[j];
          const Point& q2 = ring_b[(j + 1) % nb];
          if (opts.rule == AdjacencyRule::kSharedEdge) {
            if (segments_share_edge(p1, p2, q1, q2, opts.snap_tolerance) ||
                segments_share_edge(q1, q2, p1, p2, opts.snap_tolerance))
              return true;
          } else {
            if (segment_segment_distance(p1, p2, q1, q2) <= opts.snap_tolerance) return true;
          }
        }
      }
    }
  }
  return false;
}

}  // namespace

int RegionSet::index_of(const std::string& id) const {
  for (int i = 0; i < size(); ++i)
    if (regions[static_cast<std::size_t>(i)].id == id) return i;
  return -1;
}

double ring_area(const Ring& ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    s += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * s;
}

double region_area(const Region& region) {
  double a = std::abs(ring_area(region.outer()));
  for (std::size_t k = 1; k < region.rings.size(); ++k) a -= std::abs(ring_area(region.rings[k]));
  return a;
}

Point region_centroid(const Region& region) {
  // Area-weighted ring centroids; holes enter with negative weight.
  double total = 0.0;
  Point c(0.0, 0.0);
  for (std::size_t k = 0; k < region.rings.size(); ++k) {
    const Ring& ring = region.rings[k];
    const std::size_t n = ring.size();
    if (n < 3) continue;
    double a = 0.0;
    Point rc(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Point& p = ring[i];
      const Point& q = ring[(i + 1) % n];
      const double cross = p.x() * q.y() - q.x() * p.y();
      a += cross;
      rc += (p + q) * cross;
    }
    a *= 0.5;
    if (std::abs(a) < 1e-300) continue;
    rc /= (6.0 * a);
    const double w = (k == 0) ? std::abs(a) : -std::abs(a);
    c += w * rc;
    total += w;
  }
  if (total <= 0.0) throw std::runtime_error("degenerate polygon in region " + region.id);
  return c / total;
}

void region_bbox(const Region& region, Point& lo, Point& hi) {
  const BBox b = bbox_of(region);
  lo = b.lo;
  hi = b.hi;
}

void set_bbox(const RegionSet& regions, Point& lo, Point& hi) {
  BBox b;
  for (const auto& r : regions.regions)
    for (const auto& ring : r.rings)
      for (const auto& p : ring) b.expand(p);
  lo = b.lo;
  hi = b.hi;
}

bool point_in_region(const Point& p, const Region& region) {
  // Boundary points count as inside.
  for (const auto& ring : region.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = ring[i];
      const Point& b = ring[(i + 1) % n];
      const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
      if (point_segment_distance(p, a, b) <= 1e-12 * scale) return true;
    }
  }
  bool inside = false;
  for (const auto& ring : region.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& pi = ring[i];
      const Point& pj = ring[j];
      if (((pi.y() > p.y()) != (pj.y() > p.y())) &&
          (p.x() < (pj.x() - pi.x()) * (p.y() - pi.y()) / (pj.y() - pi.y()) + pi.x()))
        inside = !inside;
    }
  }
  return inside;
}

double point_segment_distance(const Point& p, const Point& a, const Point& b) {
  const Point d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

double distance_to_union(const Point& p, const RegionSet& regions) {
  double best = std::numeric_limits<double>::max();
  for (const auto& r : regions.regions) {
    if (point_in_region(p, r)) return 0.0;
    for (const auto& ring : r.rings) {
      const std::size_t n = ring.size();
      for (std::size_t i = 0; i < n; ++i)
        best = std::min(best, point_segment_distance(p, ring[i], ring[(i + 1) % n]));
    }
  }
  return best;
}

ContiguityMatrix build_contiguity(const RegionSet& regions, const AdjacencyOptions& opts) {
  const int m = regions.size();
  if (m == 0) throw std::runtime_error("build_contiguity: empty region set");
  std::vector<BBox> boxes;
  boxes.reserve(static_cast<std::size_t>(m));
  for (const auto& r : regions.regions) boxes.push_back(bbox_of(r));

  ContiguityMatrix out;
  out.w = Eigen::MatrixXd::Zero(m, m);
  out.neighbor_sets.assign(static_cast<std::size_t>(m), {});

  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (!boxes[static_cast<std::size_t>(i)].overlaps(boxes[static_cast<std::size_t>(j)],
                                                       opts.snap_tolerance))
        continue;
      if (regions_adjacent(regions.regions[static_cast<std::size_t>(i)],
                           regions.regions[static_cast<std::size_t>(j)], opts)) {
        raw(i, j) = raw(j, i) = 1.0;
        out.neighbor_sets[static_cast<std::size_t>(i)].push_back(j);
        out.neighbor_sets[static_cast<std::size_t>(j)].push_back(i);
      }
    }
  }
  for (auto& ns : out.neighbor_sets) std::sort(ns.begin(), ns.end());
  for (int i = 0; i < m; ++i) {
    const double deg = raw.row(i).sum();
    if (deg <= 0.0) {
      out.islands.push_back(i);
    } else {
      out.w.row(i) = raw.row(i) / deg;
    }
  }
  return out;
}

ContiguityMatrix subset_contiguity(const ContiguityMatrix& full, const std::vector<int>& keep) {
  const int m = static_cast<int>(keep.size());
  std::vector<int> pos(static_cast<std::size_t>(full.w.rows()), -1);
  for (int k = 0; k < m; ++k) pos[static_cast<std::size_t>(keep[static_cast<std::size_t>(k)])] = k;

  ContiguityMatrix out;
  out.w = Eigen::MatrixXd::Zero(m, m);
  out.neighbor_sets.assign(static_cast<std::size_t>(m), {});
  for (int k = 0; k < m; ++k) {
    const int i = keep[static_cast<std::size_t>(k)];
    // Degrees stay full-universe: dropped neighbors dilute the row sum.
    const double deg = static_cast<double>(full.neighbor_sets[static_cast<std::size_t>(i)].size());
    bool any = false;
    for (int j : full.neighbor_sets[static_cast<std::size_t>(i)]) {
      const int kj = pos[static_cast<std::size_t>(j)];
      if (kj < 0) continue;
      out.w(k, kj) = 1.0 / deg;
      out.neighbor_sets[static_cast<std::size_t>(k)].push_back(kj);
      any = true;
    }
    if (!any) out.islands.push_back(k);
  }
  return out;
}

BlockQuadrature discretize_block(const Region& region, double target_density) {
  if (target_density <= 0.0) throw std::invalid_argument("discretize_block: density must be > 0");
  const double area = region_area(region);
  if (area <= 0.0) throw std::runtime_error("discretize_block: degenerate polygon " + region.id);

  BBox box = bbox_of(region);
  double step = 1.0 / std::sqrt(target_density);
  std::vector<Point> nodes;
  for (int refine = 0; refine < 40; ++refine) {
    nodes.clear();
    const double w = box.hi.x() - box.lo.x();
    const double h = box.hi.y() - box.lo.y();
    const auto nx = static_cast<long>(std::ceil(std::max(w, step) / step));
    const auto ny = static_cast<long>(std::ceil(std::max(h, step) / step));
    for (long iy = 0; iy < ny; ++iy) {
      for (long ix = 0; ix < nx; ++ix) {
        const Point p(box.lo.x() + (static_cast<double>(ix) + 0.5) * step,
                      box.lo.y() + (static_cast<double>(iy) + 0.5) * step);
        if (p.x() > box.hi.x() || p.y() > box.hi.y()) continue;
        if (point_in_region(p, region)) nodes.push_back(p);
      }
    }
    if (nodes.size() >= 4) break;
    step *= 0.5;
  }
  if (nodes.size() < 4)
    throw std::runtime_error("discretize_block: cannot place nodes in region " + region.id);

  BlockQuadrature q;
  q.region_id = region.id;
  q.nodes.resize(static_cast<Eigen::Index>(nodes.size()), 2);
  for (std::size_t i = 0; i < nodes.size(); ++i) q.nodes.row(static_cast<Eigen::Index>(i)) = nodes[i];
  q.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nodes.size()),
                                        1.0 / static_cast<double>(nodes.size()));
  return q;
}

namespace {

Locations sample_impl(const RegionSet& regions, int count, double buffer, rng::Stream& stream) {
  Locations out(count, 2);
  if (count == 0) return out;
  if (regions.size() == 0) throw std::runtime_error("sample_uniform_locations: empty region set");
  Point lo, hi;
  set_bbox(regions, lo, hi);
  lo.array() -= buffer;
  hi.array() += buffer;
  const double w = hi.x() - lo.x();
  const double h = hi.y() - lo.y();
  if (!(w > 0.0) || !(h > 0.0))
    throw std::runtime_error("sample_uniform_locations: degenerate bounding box");

  long long attempts = 0;
  int accepted = 0;
  while (accepted < count) {
    const Point p(lo.x() + w * stream.uniform(), lo.y() + h * stream.uniform());
    ++attempts;
    bool ok;
    if (buffer > 0.0) {
      ok = distance_to_union(p, regions) <= buffer;
    } else {
      ok = false;
      for (const auto& r : regions.regions) {
        if (point_in_region(p, r)) {
          ok = true;
          break;
        }
      }
    }
    if (ok) {
      out.row(accepted) = p;
      ++accepted;
    }
    if (attempts >= 100000 &&
        static_cast<double>(accepted) < 1e-4 * static_cast<double>(attempts))
      throw std::runtime_error("sample_uniform_locations: acceptance rate below 1e-4");
  }
  return out;
}

}  // namespace

Locations sample_uniform_locations(const RegionSet& regions, int count, rng::Stream& stream) {
  return sample_impl(regions, count, 0.0, stream);
}

Locations sample_uniform_buffered(const RegionSet& regions, int count, double buffer,
                                  rng::Stream& stream) {
  return sample_impl(regions, count, std::max(0.0, buffer), stream);
}

}  // namespace sae::geo
