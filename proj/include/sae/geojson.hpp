#pragma once

#include <string>

#include "sae/geometry.hpp"

namespace sae::geo {

/// Reads a GeoJSON FeatureCollection of Polygon features. Each feature must
/// carry string property `region_id` and integer `population_count`;
/// `group_id` is optional. Coordinates must already be in a projected
/// metric CRS. Ring closing vertices are dropped on load.
RegionSet read_geojson(const std::string& path, const std::string& crs_note = "");

void write_geojson(const RegionSet& regions, const std::string& path);

}  // namespace sae::geo
