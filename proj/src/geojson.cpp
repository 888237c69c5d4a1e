#include "sae/geojson.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace sae::geo {

using nlohmann::json;

RegionSet read_geojson(const std::string& path, const std::string& crs_note) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection")
    throw std::runtime_error(path + ": expected a GeoJSON FeatureCollection");

  RegionSet out;
  out.crs_note = crs_note;
  std::set<std::string> seen;
  for (const auto& feat : doc.at("features")) {
    const auto& props = feat.at("properties");
    Region r;
    if (!props.contains("region_id"))
      throw std::runtime_error(path + ": feature missing property region_id");
    r.id = props.at("region_id").get<std::string>();
    if (!seen.insert(r.id).second)
      throw std::runtime_error(path + ": duplicate region_id '" + r.id + "'");
    if (!props.contains("population_count"))
      throw std::runtime_error(path + ": region " + r.id + " missing population_count");
    r.population_count = props.at("population_count").get<long long>();
    if (r.population_count < 0)
      throw std::runtime_error(path + ": region " + r.id + " has negative population_count");
    if (props.contains("group_id")) r.group_id = props.at("group_id").get<std::string>();

    const auto& geom = feat.at("geometry");
    if (geom.value("type", "") != "Polygon")
      throw std::runtime_error(path + ": region " + r.id + " geometry must be Polygon");
    for (const auto& ring_json : geom.at("coordinates")) {
      Ring ring;
      for (const auto& coord : ring_json) {
        const double x = coord.at(0).get<double>();
        const double y = coord.at(1).get<double>();
        if (!std::isfinite(x) || !std::isfinite(y))
          throw std::runtime_error(path + ": region " + r.id + " has non-finite coordinate");
        ring.emplace_back(x, y);
      }
      if (ring.size() >= 2 && (ring.front() - ring.back()).norm() == 0.0) ring.pop_back();
      if (ring.size() < 3)
        throw std::runtime_error(path + ": region " + r.id + " has a ring with < 3 vertices");
      r.rings.push_back(std::move(ring));
    }
    if (r.rings.empty()) throw std::runtime_error(path + ": region " + r.id + " has no rings");
    if (region_area(r) <= 0.0)
      throw std::runtime_error(path + ": region " + r.id + " has non-positive area");
    out.regions.push_back(std::move(r));
  }
  if (out.regions.empty()) throw std::runtime_error(path + ": no features");
  return out;
}

void write_geojson(const RegionSet& regions, const std::string& path) {
  json features = json::array();
  for (const auto& r : regions.regions) {
    json coords = json::array();
    for (const auto& ring : r.rings) {
      json jr = json::array();
      for (const auto& p : ring) jr.push_back(json::array({p.x(), p.y()}));
      jr.push_back(jr.front());  // close the ring
      coords.push_back(jr);
    }
    json props = {{"region_id", r.id}, {"population_count", r.population_count}};
    if (!r.group_id.empty()) props["group_id"] = r.group_id;
    features.push_back({{"type", "Feature"},
                        {"properties", props},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", coords}}}});
  }
  json doc = {{"type", "FeatureCollection"}, {"features", features}};
  if (!regions.crs_note.empty()) doc["crs_note"] = regions.crs_note;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(1) << "\n";
}

}  // namespace sae::geo
