#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ceilvo/common.hpp"
#include "ceilvo/evaluation.hpp"

namespace ceilvo {
namespace svg {

namespace detail {

struct Axis {
  double lo = 0.0, hi = 1.0;
  double to_px(double v, double px_lo, double px_hi) const {
    const double f = (v - lo) / (hi - lo);
    return px_lo + f * (px_hi - px_lo);
  }
};

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::string(buf);
}

inline void write_frame(std::ofstream& out, int w, int h, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">"
      << title << "</text>\n";
}

inline void write_axes(std::ofstream& out, int w, int h, const Axis& x_axis, const Axis& y_axis,
                       const std::string& x_label, const std::string& y_label) {
  const int margin = 55;
  out << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - 20 << "\" y2=\""
      << h - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << margin
      << "\" y2=\"30\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = x_axis.lo + (x_axis.hi - x_axis.lo) * i / 5.0;
    const double px = x_axis.to_px(fx, margin, w - 20);
    out << "<line x1=\"" << num(px) << "\" y1=\"" << h - margin << "\" x2=\"" << num(px)
        << "\" y2=\"" << h - margin + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(px) << "\" y=\"" << h - margin + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << num(fx)
        << "</text>\n";
    const double fy = y_axis.lo + (y_axis.hi - y_axis.lo) * i / 5.0;
    const double py = y_axis.to_px(fy, h - margin, 30);
    out << "<line x1=\"" << margin - 5 << "\" y1=\"" << num(py) << "\" x2=\"" << margin
        << "\" y2=\"" << num(py) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << margin - 8 << "\" y=\"" << num(py + 3)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(fy)
        << "</text>\n";
  }
  out << "<text x=\"" << (w + margin) / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n";
  out << "<text x=\"14\" y=\"" << h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 14 "
      << h / 2 << ")\">" << y_label << "</text>\n";
}

}  // namespace detail

/// Relative error against traveled distance, as a standalone SVG polyline.
inline void write_error_curve(const std::filesystem::path& path, const ErrorSeries& series,
                              const std::string& title = "relative error") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write SVG: " + path.string());
  const int w = 640, h = 420, margin = 55;

  detail::Axis x_axis, y_axis;
  x_axis.hi = series.distance.empty() ? 1.0 : std::max(series.distance.back(), 1e-9);
  double max_eps = 1e-9;
  for (double e : series.epsilon) max_eps = std::max(max_eps, e);
  y_axis.hi = max_eps * 1.05;

  detail::write_frame(out, w, h, title);
  detail::write_axes(out, w, h, x_axis, y_axis, "traveled distance [m]", "epsilon [m]");
  out << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < series.distance.size(); ++i) {
    out << detail::num(x_axis.to_px(series.distance[i], margin, w - 20)) << ','
        << detail::num(y_axis.to_px(series.epsilon[i], h - margin, 30)) << ' ';
  }
  out << "\"/>\n</svg>\n";
}

/// Labeled box-and-whisker plot (one box per entry).
inline void write_box_plot(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, BoxStats>>& boxes,
                           const std::string& title = "relative error distribution") {
  if (boxes.empty()) throw std::invalid_argument("write_box_plot: no boxes");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write SVG: " + path.string());
  const int w = std::max(360, 120 + 70 * static_cast<int>(boxes.size()));
  const int h = 420, margin = 55;

  detail::Axis y_axis;
  double hi = 1e-9;
  for (const auto& [label, b] : boxes) hi = std::max(hi, b.whisker_hi);
  y_axis.hi = hi * 1.1;

  detail::write_frame(out, w, h, title);
  detail::Axis x_axis;
  x_axis.hi = static_cast<double>(boxes.size());
  detail::write_axes(out, w, h, x_axis, y_axis, "", "epsilon [m]");

  const double slot = static_cast<double>(w - 20 - margin) / static_cast<double>(boxes.size());
  for (size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i].second;
    const double cx = margin + (static_cast<double>(i) + 0.5) * slot;
    const double half = std::min(22.0, slot * 0.3);
    const auto py = [&](double v) { return y_axis.to_px(v, h - margin, 30); };
    out << "<line x1=\"" << detail::num(cx) << "\" y1=\"" << detail::num(py(b.whisker_lo))
        << "\" x2=\"" << detail::num(cx) << "\" y2=\"" << detail::num(py(b.whisker_hi))
        << "\" stroke=\"black\"/>\n";
    for (double v : {b.whisker_lo, b.whisker_hi}) {
      out << "<line x1=\"" << detail::num(cx - half * 0.6) << "\" y1=\"" << detail::num(py(v))
          << "\" x2=\"" << detail::num(cx + half * 0.6) << "\" y2=\"" << detail::num(py(v))
          << "\" stroke=\"black\"/>\n";
    }
    out << "<rect x=\"" << detail::num(cx - half) << "\" y=\"" << detail::num(py(b.q3))
        << "\" width=\"" << detail::num(2 * half) << "\" height=\""
        << detail::num(std::max(py(b.q1) - py(b.q3), 0.5))
        << "\" fill=\"#cfe3f5\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << detail::num(cx - half) << "\" y1=\"" << detail::num(py(b.q2))
        << "\" x2=\"" << detail::num(cx + half) << "\" y2=\"" << detail::num(py(b.q2))
        << "\" stroke=\"#d95319\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << detail::num(cx) << "\" y=\"" << h - margin + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << boxes[i].first << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace svg
}  // namespace ceilvo
