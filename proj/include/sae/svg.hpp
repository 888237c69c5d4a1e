#pragma once

#include <string>
#include <vector>

namespace sae::svg {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool line = false;  // false: scatter markers
};

/// Minimal static scatter/line plot. The CSVs carry the data of record;
/// these renderings are conveniences for quick inspection.
void write_plot(const std::string& path, const std::string& title,
                const std::vector<Series>& series, const std::string& x_label,
                const std::string& y_label);

}  // namespace sae::svg
