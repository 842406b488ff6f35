#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "blofin/data.hpp"

namespace blofin {

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
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

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

struct SvgSeries {
  std::string name;
  std::string color;
  std::vector<double> values;  // y per integer x
};

// Self-contained line chart: inline styling only, one polyline per series,
// labeled axes, y fixed to [0, 1].
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<SvgSeries>& series) {
  const double width = 640, height = 420;
  const double left = 60, right = 610, top = 50, bottom = 370;
  std::size_t n = 1;
  for (const auto& s : series) n = std::max(n, s.values.size());
  const double x_span = static_cast<double>(std::max<std::size_t>(n - 1, 1));

  auto x_of = [&](std::size_t i) {
    return left + (right - left) * static_cast<double>(i) / x_span;
  };
  auto y_of = [&](double v) {
    return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0);
  };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"320\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\" "
         "text-anchor=\"middle\">"
      << detail::xml_escape(title) << "</text>\n";

  // Axes and ticks.
  out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right
      << "\" y2=\"" << bottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << bottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    const double y = y_of(v);
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << detail::fmt2(y) << "\" x2=\"" << left
        << "\" y2=\"" << detail::fmt2(y) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << detail::fmt2(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
        << detail::fmt2(v) << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const std::size_t i = n == 1 ? 0 : static_cast<std::size_t>(t * (n - 1) / 4);
    const double x = x_of(i);
    out << "<line x1=\"" << detail::fmt2(x) << "\" y1=\"" << bottom << "\" x2=\""
        << detail::fmt2(x) << "\" y2=\"" << bottom + 4 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << detail::fmt2(x) << "\" y=\"" << bottom + 18
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << i
        << "</text>\n";
  }
  out << "<text x=\"335\" y=\"405\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\">"
      << detail::xml_escape(x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"210\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 18 210)\">"
      << detail::xml_escape(y_label) << "</text>\n";

  // Legend and polylines.
  double legend_y = top + 6;
  for (const auto& s : series) {
    out << "<line x1=\"" << right - 120 << "\" y1=\"" << detail::fmt2(legend_y)
        << "\" x2=\"" << right - 96 << "\" y2=\"" << detail::fmt2(legend_y)
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << right - 90 << "\" y=\"" << detail::fmt2(legend_y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(s.name)
        << "</text>\n";
    legend_y += 18;

    out << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (i) out << ' ';
      out << detail::fmt2(x_of(i)) << ',' << detail::fmt2(y_of(s.values[i]));
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

struct SvgBarGroup {
  std::string label;
  std::vector<double> values;  // one bar per series
};

// Grouped bar chart with one color per series; y fixed to [0, 1].
inline void write_bar_chart(const std::string& path, const std::string& title,
                            const std::string& y_label,
                            const std::vector<std::string>& series_names,
                            const std::vector<std::string>& series_colors,
                            const std::vector<SvgBarGroup>& groups) {
  const double width = 640, height = 420;
  const double left = 60, right = 610, top = 50, bottom = 370;
  const std::size_t n_groups = std::max<std::size_t>(groups.size(), 1);
  const std::size_t n_series = std::max<std::size_t>(series_names.size(), 1);
  const double group_width = (right - left) / static_cast<double>(n_groups);
  const double bar_width = group_width * 0.7 / static_cast<double>(n_series);

  auto y_of = [&](double v) {
    return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0);
  };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"320\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\" "
         "text-anchor=\"middle\">"
      << detail::xml_escape(title) << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right
      << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    out << "<text x=\"" << left - 8 << "\" y=\"" << detail::fmt2(y_of(v) + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
        << detail::fmt2(v) << "</text>\n";
  }
  out << "<text x=\"18\" y=\"210\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 18 210)\">"
      << detail::xml_escape(y_label) << "</text>\n";

  double legend_y = top + 6;
  for (std::size_t s = 0; s < series_names.size(); ++s) {
    out << "<rect x=\"" << right - 120 << "\" y=\"" << detail::fmt2(legend_y - 8)
        << "\" width=\"12\" height=\"12\" fill=\"" << series_colors[s] << "\"/>\n";
    out << "<text x=\"" << right - 102 << "\" y=\"" << detail::fmt2(legend_y + 2)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << detail::xml_escape(series_names[s]) << "</text>\n";
    legend_y += 18;
  }

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + group_width * (static_cast<double>(g) + 0.15);
    for (std::size_t s = 0; s < groups[g].values.size(); ++s) {
      const double v = groups[g].values[s];
      const double x = gx + bar_width * static_cast<double>(s);
      out << "<rect x=\"" << detail::fmt2(x) << "\" y=\"" << detail::fmt2(y_of(v))
          << "\" width=\"" << detail::fmt2(bar_width * 0.9) << "\" height=\""
          << detail::fmt2(bottom - y_of(v)) << "\" fill=\"" << series_colors[s]
          << "\"/>\n";
    }
    out << "<text x=\"" << detail::fmt2(left + group_width * (static_cast<double>(g) + 0.5))
        << "\" y=\"" << bottom + 18
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
        << detail::xml_escape(groups[g].label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace blofin
