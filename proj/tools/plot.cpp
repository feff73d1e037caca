#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "gtnn/error.hpp"
#include "gtnn/io.hpp"

namespace gtnn::tools {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("csv has no column \"" + name + "\"");
  return static_cast<std::size_t>(it - header.begin());
}

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

void plot_csv(const PlotOptions& o) {
  std::ifstream in(o.csv);
  if (!in) throw DataError("cannot open " + o.csv.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(o.csv.string() + ": empty file");
  const auto header = split(line);
  const std::size_t xc = column(header, o.x), yc = column(header, o.y);
  const std::size_t gc = o.group.empty() ? header.size() : column(header, o.group);

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw DataError(o.csv.string() + ": wrong number of cells", lineno);
    double x = 0.0, y = 0.0;
    try {
      x = std::stod(cells[xc]);
      y = std::stod(cells[yc]);
    } catch (const std::exception&) {
      throw DataError(o.csv.string() + ": non-numeric value", lineno);
    }
    if (!std::isfinite(x) || !std::isfinite(y) || (o.log_y && y <= 0.0)) continue;
    series[gc < header.size() ? cells[gc] : o.y].emplace_back(x, o.log_y ? std::log10(y) : y);
  }
  if (series.empty()) throw DataError(o.csv.string() + ": nothing to plot");

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& [_, pts] : series)
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  const double w = 640, h = 400, left = 70, right = 150, top = 20, bottom = 50;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };
  auto label = [&](double v) { return format_double(o.log_y ? std::pow(10.0, v) : v); };

  std::ofstream svg(o.out);
  if (!svg) throw DataError("cannot write " + o.out.string());
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w - left - right << "\" height=\""
      << h - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"" << h - bottom + 15 << "\">" << format_double(x0) << "</text>\n";
  svg << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 15 << "\" text-anchor=\"end\">" << format_double(x1)
      << "</text>\n";
  svg << "<text x=\"" << left - 4 << "\" y=\"" << h - bottom << "\" text-anchor=\"end\">" << label(y0) << "</text>\n";
  svg << "<text x=\"" << left - 4 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\">" << label(y1) << "</text>\n";
  svg << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">" << o.x
      << "</text>\n";
  svg << "<text x=\"15\" y=\"" << (top + h - bottom) / 2 << "\" transform=\"rotate(-90 15 " << (top + h - bottom) / 2
      << ")\" text-anchor=\"middle\">" << o.y << (o.log_y ? " (log)" : "") << "</text>\n";
  std::size_t i = 0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* color = kColors[i % std::size(kColors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) svg << px(x) << ',' << py(y) << ' ';
    svg << "\"/>\n";
    svg << "<text x=\"" << w - right + 8 << "\" y=\"" << top + 14 * (i + 1) << "\" fill=\"" << color << "\">" << name
        << "</text>\n";
    ++i;
  }
  svg << "</svg>\n";
}

}  // namespace gtnn::tools
