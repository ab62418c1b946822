#include "ndlc/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ndlc {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
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
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.04 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

// Roughly five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) {
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string render_svg(const PlotSpec& plot) {
  const double left = 64, right = 16, top = 32, bottom = 44;
  const double W = plot.width, H = plot.height;
  const double pw = W - left - right, ph = H - top - bottom;

  Range xr, yr;
  for (const auto& s : plot.lines) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  for (const auto& s : plot.points) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  for (const auto& b : plot.bands) {
    for (double v : b.x) xr.add(v);
    for (double v : b.lo) yr.add(v);
    for (double v : b.hi) yr.add(v);
  }
  if (std::isfinite(plot.marker_x)) xr.add(plot.marker_x);
  xr.finish();
  yr.finish();
  auto sx = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double y) { return top + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\"" << plot.height
    << "\" viewBox=\"0 0 " << plot.width << ' ' << plot.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(W / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(plot.title)
    << "</text>\n";

  for (double v : ticks(xr.lo, xr.hi)) {
    o << "<line x1=\"" << num(sx(v)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(sx(v)) << "\" y2=\""
      << num(top + ph) << "\" stroke=\"#e5e5e5\"/>\n";
    o << "<text x=\"" << num(sx(v)) << "\" y=\"" << num(top + ph + 14) << "\" text-anchor=\"middle\">"
      << tick_label(v) << "</text>\n";
  }
  for (double v : ticks(yr.lo, yr.hi)) {
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(sy(v)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
      << num(sy(v)) << "\" stroke=\"#e5e5e5\"/>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">"
      << tick_label(v) << "</text>\n";
  }
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(H - 8) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(14 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(plot.y_label) << "</text>\n";

  for (const auto& b : plot.bands) {
    if (b.x.empty()) continue;
    o << "<polygon class=\"band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t k = 0; k < b.x.size(); ++k) o << num(sx(b.x[k])) << ',' << num(sy(b.hi[k])) << ' ';
    for (std::size_t k = b.x.size(); k-- > 0;) o << num(sx(b.x[k])) << ',' << num(sy(b.lo[k])) << ' ';
    o << "\"/>\n";
  }
  if (std::isfinite(plot.marker_x)) {
    o << "<line x1=\"" << num(sx(plot.marker_x)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(sx(plot.marker_x))
      << "\" y2=\"" << num(top + ph) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  }

  int colour = 0;
  std::vector<std::pair<std::string, const char*>> legend;
  for (const auto& s : plot.lines) {
    const char* c = kPalette[colour++ % 7];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.3\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (std::isfinite(s.y[k])) o << num(sx(s.x[k])) << ',' << num(sy(s.y[k])) << ' ';
    }
    o << "\"/>\n";
    if (!s.label.empty()) legend.emplace_back(s.label, c);
  }
  for (const auto& s : plot.points) {
    const char* c = kPalette[colour++ % 7];
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      o << "<circle cx=\"" << num(sx(s.x[k])) << "\" cy=\"" << num(sy(s.y[k])) << "\" r=\"2.2\" fill=\"" << c
        << "\"/>\n";
    }
    if (!s.label.empty()) legend.emplace_back(s.label, c);
  }
  for (std::size_t k = 0; k < legend.size(); ++k) {
    const double y = top + 12 + 14 * static_cast<double>(k);
    o << "<rect x=\"" << num(left + pw - 120) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
      << legend[k].second << "\"/>\n";
    o << "<text x=\"" << num(left + pw - 106) << "\" y=\"" << num(y + 1) << "\">" << escape(legend[k].first)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string trace_plot_svg(const std::string& name, const std::vector<Vector>& chains) {
  PlotSpec plot;
  plot.title = "Trace: " + name;
  plot.x_label = "stored draw";
  plot.y_label = name;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    Series s;
    s.label = "chain " + std::to_string(c + 1);
    for (Eigen::Index k = 0; k < chains[c].size(); ++k) {
      s.x.push_back(static_cast<double>(k + 1));
      s.y.push_back(chains[c][k]);
    }
    plot.lines.push_back(std::move(s));
  }
  return render_svg(plot);
}

PlotSpec trajectory_plot(const ForecastResult& f, int person, int factor) {
  PlotSpec plot;
  plot.title = "Person " + std::to_string(person + 1) + ", factor " + std::to_string(factor + 1);
  plot.x_label = "occasion";
  plot.y_label = "factor score";
  Series fitted{"smoothed", {}, {}};
  for (int t = 0; t < f.n_occasions; ++t) {
    fitted.x.push_back(t + 1);
    fitted.y.push_back(f.smoothed_at(person, t, factor));
  }
  Series mean{"forecast mean", {}, {}};
  Band band;
  for (int h = 0; h < f.horizon; ++h) {
    const ForecastCell& c = f.cell(person, h, factor);
    const double x = f.n_occasions + h + 1;
    mean.x.push_back(x);
    mean.y.push_back(c.mean);
    band.x.push_back(x);
    band.lo.push_back(c.lo);
    band.hi.push_back(c.hi);
  }
  if (!fitted.x.empty()) plot.lines.push_back(std::move(fitted));
  if (!mean.x.empty()) {
    plot.lines.push_back(std::move(mean));
    plot.bands.push_back(std::move(band));
  }
  plot.marker_x = f.n_occasions;
  return plot;
}

}  // namespace ndlc
