#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ndlc/forecast.hpp"
#include "ndlc/model.hpp"

namespace ndlc {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Band {
  std::vector<double> x;
  std::vector<double> lo;
  std::vector<double> hi;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> lines;
  std::vector<Band> bands;
  std::vector<Series> points;
  // Vertical marker, e.g. the last estimation occasion. NaN = none.
  double marker_x = std::numeric_limits<double>::quiet_NaN();
  int width = 720;
  int height = 360;
};

// Deterministic SVG (fixed number formatting, no timestamps).
std::string render_svg(const PlotSpec& plot);

// Stored draws of one parameter, one line per chain.
std::string trace_plot_svg(const std::string& name, const std::vector<Vector>& chains);

// Smoothed in-sample line, forecast mean and interval band for one person
// and factor. Band edges are the lo/hi columns of the forecast cells.
PlotSpec trajectory_plot(const ForecastResult& f, int person, int factor);

}  // namespace ndlc
