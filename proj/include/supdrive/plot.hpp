#ifndef SUPDRIVE_PLOT_HPP_
#define SUPDRIVE_PLOT_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "supdrive/common.hpp"

namespace supdrive::plot {

// Minimal static SVG charts: bars with error whiskers, histograms, lines.

struct Frame {
  double width = 640, height = 400;
  double left = 70, right = 20, top = 40, bottom = 90;
  double x0() const { return left; }
  double x1() const { return width - right; }
  double y0() const { return height - bottom; }
  double y1() const { return top; }
};

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline std::string num(double x) {
  std::ostringstream ss;
  ss.precision(4);
  ss << x;
  return ss.str();
}

class Svg {
 public:
  explicit Svg(Frame f) : f_(f) {
    s_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
       << f.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black",
            double w = 1) {
    s_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
       << "\" stroke=\"" << stroke << "\" stroke-width=\"" << w << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    s_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << std::max(0.0, w)
       << "\" height=\"" << std::max(0.0, h) << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& t, const std::string& anchor = "middle",
            double rotate = 0) {
    s_ << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor << "\"";
    if (rotate != 0) s_ << " transform=\"rotate(" << rotate << " " << x << " " << y << ")\"";
    s_ << ">" << esc(t) << "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    s_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) s_ << x << "," << y << " ";
    s_ << "\"/>\n";
  }
  void axes(const std::string& title, const std::string& xlabel, const std::string& ylabel,
            double ymin, double ymax) {
    line(f_.x0(), f_.y0(), f_.x1(), f_.y0());
    line(f_.x0(), f_.y0(), f_.x0(), f_.y1());
    text((f_.x0() + f_.x1()) / 2, 20, title);
    text((f_.x0() + f_.x1()) / 2, f_.height - 10, xlabel);
    text(18, (f_.y0() + f_.y1()) / 2, ylabel, "middle", -90);
    for (int i = 0; i <= 4; ++i) {
      const double v = ymin + (ymax - ymin) * i / 4.0;
      const double y = ymap(v, ymin, ymax);
      line(f_.x0() - 4, y, f_.x0(), y);
      text(f_.x0() - 6, y + 4, num(v), "end");
    }
  }
  double ymap(double v, double ymin, double ymax) const {
    return f_.y0() - (v - ymin) / (ymax - ymin) * (f_.y0() - f_.y1());
  }
  const Frame& frame() const { return f_; }
  std::string str() const { return s_.str() + "</svg>\n"; }

 private:
  Frame f_;
  std::ostringstream s_;
};

inline void save(const std::filesystem::path& p, const std::string& svg) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << svg;
}

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0, 1};
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {std::min(0.0, lo - pad), hi + pad};
}

inline std::string bar_chart(const std::string& title, const std::string& ylabel,
                             const std::vector<std::string>& labels,
                             const std::vector<double>& values, const std::vector<double>& err) {
  Frame f;
  f.width = std::max(640.0, 40.0 * labels.size() + 100);
  Svg svg(f);
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    const double e = i < err.size() && std::isfinite(err[i]) ? err[i] : 0.0;
    lo = std::min(lo, values[i] - e);
    hi = std::max(hi, values[i] + e);
  }
  const auto [ymin, ymax] = padded_range(lo, hi);
  svg.axes(title, "condition", ylabel, ymin, ymax);
  const double slot = (f.x1() - f.x0()) / std::max<std::size_t>(1, labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double cx = f.x0() + slot * (i + 0.5);
    if (std::isfinite(values[i])) {
      const double y = svg.ymap(values[i], ymin, ymax);
      const double yz = svg.ymap(0.0, ymin, ymax);
      svg.rect(cx - slot * 0.35, std::min(y, yz), slot * 0.7, std::abs(yz - y), "#4c78a8");
      if (i < err.size() && std::isfinite(err[i])) {
        const double a = svg.ymap(values[i] - err[i], ymin, ymax);
        const double b = svg.ymap(values[i] + err[i], ymin, ymax);
        svg.line(cx, a, cx, b);
        svg.line(cx - 4, a, cx + 4, a);
        svg.line(cx - 4, b, cx + 4, b);
      }
    }
    svg.text(cx, f.y0() + 12, labels[i], "end", -45);
  }
  return svg.str();
}

inline std::string histogram(const std::string& title, const std::string& xlabel,
                             const std::vector<double>& data, int bins = 20) {
  Frame f;
  Svg svg(f);
  if (data.empty()) {
    svg.axes(title, xlabel, "count", 0, 1);
    return svg.str();
  }
  const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
  const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
  std::vector<int> counts(bins, 0);
  for (double x : data) {
    const int b = std::min(bins - 1, static_cast<int>((x - lo) / (hi - lo) * bins));
    ++counts[std::max(0, b)];
  }
  const double cmax = *std::max_element(counts.begin(), counts.end());
  svg.axes(title, xlabel, "count", 0, cmax);
  const double w = (f.x1() - f.x0()) / bins;
  for (int b = 0; b < bins; ++b) {
    const double y = svg.ymap(counts[b], 0, cmax);
    svg.rect(f.x0() + b * w + 1, y, w - 2, f.y0() - y, "#f58518");
  }
  svg.text(f.x0(), f.y0() + 14, num(lo));
  svg.text(f.x1(), f.y0() + 14, num(hi));
  return svg.str();
}

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color = "#4c78a8";
};

inline std::string line_chart(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, const std::vector<Series>& series) {
  Frame f;
  Svg svg(f);
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  if (xhi - xlo < 1e-12) xhi = xlo + 1;
  if (yhi - ylo < 1e-12) yhi = ylo + 1;
  svg.axes(title, xlabel, ylabel, ylo, yhi);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      pts.emplace_back(f.x0() + (s.x[i] - xlo) / (xhi - xlo) * (f.x1() - f.x0()),
                       svg.ymap(s.y[i], ylo, yhi));
    svg.polyline(pts, s.color);
    svg.text(f.x1() - 5, f.y1() + 14 * (k + 1), s.name, "end");
  }
  svg.text(f.x0(), f.y0() + 14, num(xlo));
  svg.text(f.x1(), f.y0() + 14, num(xhi));
  return svg.str();
}

}  // namespace supdrive::plot

#endif  // SUPDRIVE_PLOT_HPP_
