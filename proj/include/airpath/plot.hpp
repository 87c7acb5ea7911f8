#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "airpath/csv.hpp"

namespace airpath {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct PlotPanel {
  std::string title;
  std::string y_label;
  std::vector<PlotSeries> series;
};

/// Stacked line panels sharing one x axis, as a standalone SVG document.
std::string render_svg(const std::vector<PlotPanel>& panels, const std::string& x_label,
                       int width = 960, int panel_height = 240);

void write_svg(const std::filesystem::path& path, const std::vector<PlotPanel>& panels,
               const std::string& x_label);

/// Panels for p_im and EGR rate (measured solid, target dashed) plus the two
/// actuator positions, one trace per labelled table.  Tables must carry the
/// SimLog columns.
std::vector<PlotPanel> simlog_panels(const std::vector<std::pair<std::string, CsvTable>>& logs);

}  // namespace airpath
