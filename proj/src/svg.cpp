#include "sae/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sae::svg {

namespace {
constexpr double kW = 640, kH = 480, kPad = 56;
}

void write_plot(const std::string& path, const std::string& title,
                const std::vector<Series>& series, const std::string& x_label,
                const std::string& y_label) {
  double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
  double ymin = xmin, ymax = xmax;
  for (const auto& s : series) {
    for (double v : s.x) {
      if (!std::isfinite(v)) continue;
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  const auto px = [&](double x) { return kPad + (x - xmin) / (xmax - xmin) * (kW - 2 * kPad); };
  const auto py = [&](double y) { return kH - kPad - (y - ymin) / (ymax - ymin) * (kH - 2 * kPad); };

  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH << "'>\n";
  o << "<rect width='100%' height='100%' fill='white'/>\n";
  o << "<text x='" << kW / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
    << "</text>\n";
  o << "<line x1='" << kPad << "' y1='" << kH - kPad << "' x2='" << kW - kPad << "' y2='"
    << kH - kPad << "' stroke='black'/>\n";
  o << "<line x1='" << kPad << "' y1='" << kPad << "' x2='" << kPad << "' y2='" << kH - kPad
    << "' stroke='black'/>\n";
  o << "<text x='" << kW / 2 << "' y='" << kH - 12 << "' text-anchor='middle' font-size='12'>"
    << x_label << "</text>\n";
  o << "<text x='16' y='" << kH / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
    << kH / 2 << ")'>" << y_label << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + t * (xmax - xmin) / 4.0;
    const double yv = ymin + t * (ymax - ymin) / 4.0;
    o << "<text x='" << px(xv) << "' y='" << kH - kPad + 16
      << "' text-anchor='middle' font-size='10'>" << xv << "</text>\n";
    o << "<text x='" << kPad - 6 << "' y='" << py(yv) + 3
      << "' text-anchor='end' font-size='10'>" << yv << "</text>\n";
  }
  for (const auto& s : series) {
    if (s.line) {
      o << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << px(s.x[i]) << "," << py(s.y[i]) << " ";
      }
      o << "'/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << "<circle cx='" << px(s.x[i]) << "' cy='" << py(s.y[i]) << "' r='2.4' fill='"
          << s.color << "' fill-opacity='0.8'/>\n";
      }
    }
  }
  o << "</svg>\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << o.str();
}

}  // namespace sae::svg
