#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace signalopt::plot {

namespace {

constexpr double W = 720, H = 420, L = 80, R = 170, T = 40, B = 60;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

void open(std::ostringstream& os, const std::string& title, const std::string& header) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- " << esc(header) << " -->\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << esc(title) << "</text>\n";
}

struct Range {
  double lo, hi;
};

Range pad(double lo, double hi) {
  if (!(hi > lo)) {
    const double d = std::abs(lo) > 0 ? 0.05 * std::abs(lo) : 1.0;
    return {lo - d, hi + d};
  }
  const double d = 0.05 * (hi - lo);
  return {lo - d, hi + d};
}

void axes(std::ostringstream& os, Range xr, Range yr, const std::string& xlabel,
          const std::string& ylabel, bool xticks) {
  const double pw = W - L - R, ph = H - T - B;
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fy = k / 4.0;
    const double y = T + ph * (1 - fy);
    os << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << y << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << L - 6 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\">" << num(yr.lo + fy * (yr.hi - yr.lo)) << "</text>\n";
    if (xticks) {
      const double x = L + pw * fy;
      os << "<text x=\"" << x << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">"
         << num(xr.lo + fy * (xr.hi - xr.lo)) << "</text>\n";
    }
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
     << esc(xlabel) << "</text>\n"
     << "<text transform=\"translate(18," << T + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel) << "</text>\n";
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& xlabel,
                       const std::string& ylabel, const std::vector<Series>& series,
                       const std::string& header) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = x1 = y0 = y1 = 0.0;
  const Range xr = pad(x0, x1), yr = pad(y0, y1);
  std::ostringstream os;
  open(os, title, header);
  axes(os, xr, yr, xlabel, ylabel, true);
  const double pw = W - L - R, ph = H - T - B;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << num(L + pw * (s.x[i] - xr.lo) / (xr.hi - xr.lo)) << ','
         << num(T + ph * (1 - (s.y[i] - yr.lo) / (yr.hi - yr.lo))) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 12 << "\" x2=\"" << W - R + 32 << "\" y1=\"" << ly - 4
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << W - R + 38 << "\" y=\"" << ly << "\">" << esc(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const std::string& title, const std::string& ylabel,
                      const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& header) {
  double hi = 0.0;
  for (double v : values) hi = std::max(hi, v);
  const Range yr{0.0, hi > 0 ? hi * 1.1 : 1.0};
  std::ostringstream os;
  open(os, title, header);
  axes(os, {0, 1}, yr, "", ylabel, false);
  const double pw = W - L - R, ph = H - T - B;
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double h = ph * values[k] / yr.hi;
    const double x = L + slot * static_cast<double>(k) + 0.15 * slot;
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(T + ph - h) << "\" width=\"" << num(0.7 * slot)
       << "\" height=\"" << num(h) << "\" fill=\"" << kColors[k % 6] << "\"/>\n"
       << "<text x=\"" << num(x + 0.35 * slot) << "\" y=\"" << num(T + ph - h - 4)
       << "\" text-anchor=\"middle\">" << num(values[k]) << "</text>\n"
       << "<text x=\"" << num(x + 0.35 * slot) << "\" y=\"" << T + ph + 16
       << "\" text-anchor=\"middle\">" << esc(k < labels.size() ? labels[k] : "") << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace signalopt::plot
