#pragma once

#include <filesystem>
#include <string>

namespace gtnn::tools {

struct PlotOptions {
  std::filesystem::path csv;
  std::filesystem::path out;
  std::string x;
  std::string y;
  std::string group;  // optional column splitting rows into series
  bool log_y = false;
};

/// Line plot of one CSV column against another as a standalone SVG.
void plot_csv(const PlotOptions& options);

}  // namespace gtnn::tools
