#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "featprobe/feature_matrix.hpp"

namespace featprobe::svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Viridis-like ramp on [0, 1].
inline std::string color(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops = {{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * double(stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
  const double t = v - double(i);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                int(std::lround(stops[i][0] + t * (stops[i + 1][0] - stops[i][0]))),
                int(std::lround(stops[i][1] + t * (stops[i + 1][1] - stops[i][1]))),
                int(std::lround(stops[i][2] + t * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

/// Labelled heatmap with per-cell values and a [0, 1] colorbar.
inline std::string heatmap(const Matrix& values, const std::vector<std::string>& rowLabels,
                           const std::vector<std::string>& colLabels, const std::string& title) {
  constexpr int cell = 56, left = 220, top = 50, bar = 18;
  const int bottom = 160;
  const int w = left + int(values.cols()) * cell + 90;
  const int h = top + int(values.rows()) * cell + bottom;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    const int y = top + int(i) * cell;
    o << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << escape(rowLabels[std::size_t(i)]) << "</text>\n";
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const int x = left + int(j) * cell;
      const double v = values(i, j);
      char num[16];
      std::snprintf(num, sizeof(num), "%.2f", v);
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
        << color(v) << "\" stroke=\"white\"/>\n";
      o << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
        << (v > 0.6 ? "black" : "white") << "\">" << num << "</text>\n";
    }
  }
  const int labelY = top + int(values.rows()) * cell + 8;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const int x = left + int(j) * cell + cell / 2;
    o << "<text transform=\"translate(" << x << "," << labelY << ") rotate(45)\">"
      << escape(colLabels[std::size_t(j)]) << "</text>\n";
  }
  const int bx = left + int(values.cols()) * cell + 30, by = top, bh = std::max(100, int(values.rows()) * cell);
  for (int k = 0; k < 50; ++k) {
    const double v = 1.0 - k / 49.0;
    o << "<rect x=\"" << bx << "\" y=\"" << by + k * bh / 50 << "\" width=\"" << bar << "\" height=\""
      << bh / 50 + 1 << "\" fill=\"" << color(v) << "\"/>\n";
  }
  o << "<text x=\"" << bx + bar + 4 << "\" y=\"" << by + 8 << "\">1.0</text>\n";
  o << "<text x=\"" << bx + bar + 4 << "\" y=\"" << by + bh << "\">0.0</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace featprobe::svg
