#include "rmit/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "rmit/error.hpp"

namespace rmit {
namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

class Canvas {
 public:
  Canvas(const std::string& title, const std::string& x_label, const std::string& y_label, Range xr, Range yr)
      : xr_(xr), yr_(yr) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
        << "</text>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">" << escape(x_label)
        << "</text>\n"
        << "<text x=\"18\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << kHeight / 2 << ")\">" << escape(y_label) << "</text>\n";
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    os_ << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = xr_.lo + (xr_.hi - xr_.lo) * i / 4.0;
      const double fy = yr_.lo + (yr_.hi - yr_.lo) * i / 4.0;
      os_ << "<text x=\"" << px(fx) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
      os_ << "<text x=\"" << x0 - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
      os_ << "<line x1=\"" << x0 << "\" x2=\"" << x1 << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
          << "\" stroke=\"#ddd\"/>\n";
    }
  }

  double px(double x) const { return kLeft + (x - xr_.lo) / (xr_.hi - xr_.lo) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - yr_.lo) / (yr_.hi - yr_.lo) * (kHeight - kTop - kBottom); }
  std::ostringstream& out() { return os_; }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  Range xr_, yr_;
  std::ostringstream os_;
};

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidInput("plot series '" + s.name + "' has ragged coordinates");
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  Canvas canvas(title, x_label, y_label, xr, yr);
  auto& os = canvas.out();
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto* color = kPalette[k % std::size(kPalette)];
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) os << canvas.px(s.x[i]) << ',' << canvas.py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << "<circle cx=\"" << canvas.px(s.x[i]) << "\" cy=\"" << canvas.py(s.y[i]) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    os << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 16 + 15 * static_cast<double>(k) << "\" fill=\"" << color
       << "\">" << escape(s.name) << "</text>\n";
  }
  return canvas.finish();
}

std::string svg_scatter_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                             const std::vector<double>& x, const std::vector<double>& y,
                             const std::string& annotation) {
  if (x.size() != y.size()) throw InvalidInput("scatter plot needs paired coordinates");
  Range xr, yr;
  for (double v : x) xr.add(v);
  for (double v : y) yr.add(v);
  xr.finish();
  yr.finish();
  Canvas canvas(title, x_label, y_label, xr, yr);
  auto& os = canvas.out();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    os << "<circle cx=\"" << canvas.px(x[i]) << "\" cy=\"" << canvas.py(y[i]) << "\" r=\"4\" fill=\"" << kPalette[0]
       << "\" fill-opacity=\"0.7\"/>\n";
  }
  os << "<text x=\"" << kWidth - kRight - 8 << "\" y=\"" << kTop + 18 << "\" text-anchor=\"end\" font-size=\"14\">"
     << escape(annotation) << "</text>\n";
  return canvas.finish();
}

}  // namespace rmit
