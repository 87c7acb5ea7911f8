#include "airpath/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double m = std::max(std::abs(lo) * 0.05, 1e-6);
      lo -= m;
      hi += m;
    } else {
      const double m = 0.05 * (hi - lo);
      lo -= m;
      hi += m;
    }
  }
};

// 1-2-5 tick spacing giving roughly `target` ticks
double tick_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double f : {1.0, 2.0, 5.0, 10.0})
    if (raw <= f * mag) return f * mag;
  return 10.0 * mag;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << (std::abs(v) < 1e-12 ? 0.0 : v);
  return os.str();
}

}  // namespace

std::string render_svg(const std::vector<PlotPanel>& panels, const std::string& x_label,
                       int width, int panel_height) {
  if (panels.empty()) throw InputError("render_svg: no panels");
  const int left = 80, right = 170, top = 30, gap = 50;
  const int plot_w = width - left - right;
  const int plot_h = panel_height - gap;
  const int height = top + static_cast<int>(panels.size()) * panel_height + 20;

  Range xr;
  for (const auto& p : panels)
    for (const auto& s : p.series) {
      if (s.x.size() != s.y.size())
        throw InputError("render_svg: series '" + s.label + "' has unequal x/y lengths");
      for (double v : s.x) xr.add(v);
    }
  if (!std::isfinite(xr.lo)) xr.lo = 0.0, xr.hi = 1.0;
  if (xr.hi <= xr.lo) xr.hi = xr.lo + 1.0;

  std::ostringstream svg;
  svg << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << width << R"(" height=")"
      << height << R"(" font-family="sans-serif" font-size="12">)" << '\n'
      << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& panel = panels[pi];
    const int y0 = top + static_cast<int>(pi) * panel_height;
    Range yr;
    for (const auto& s : panel.series)
      for (double v : s.y) yr.add(v);
    yr.pad();

    auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
    auto py = [&](double y) { return y0 + plot_h - (y - yr.lo) / (yr.hi - yr.lo) * plot_h; };

    svg << "<text x=\"" << left << "\" y=\"" << y0 - 8 << "\" font-weight=\"bold\">"
        << escape(panel.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << plot_w
        << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#444\"/>\n";

    const double ys = tick_step(yr.hi - yr.lo, 5);
    for (double v = std::ceil(yr.lo / ys) * ys; v <= yr.hi; v += ys) {
      svg << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << py(v)
          << "\" y2=\"" << py(v) << "\" stroke=\"#e5e5e5\"/>\n";
      svg << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4
          << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    const double xs = tick_step(xr.hi - xr.lo, 8);
    for (double v = std::ceil(xr.lo / xs) * xs; v <= xr.hi; v += xs) {
      svg << "<text x=\"" << px(v) << "\" y=\"" << y0 + plot_h + 15
          << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
    }
    svg << "<text transform=\"translate(" << 18 << "," << y0 + plot_h / 2
        << ") rotate(-90)\" text-anchor=\"middle\">" << escape(panel.y_label) << "</text>\n";

    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const auto& s = panel.series[si];
      const char* colour = kPalette[si % kPalette.size()];
      svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\"";
      if (s.dashed) svg << " stroke-dasharray=\"5,3\"";
      svg << " points=\"";
      // thin very long traces to about two points per pixel column
      const std::size_t stride = std::max<std::size_t>(1, s.x.size() / (2 * plot_w));
      for (std::size_t k = 0; k < s.x.size(); k += stride) {
        if (!std::isfinite(s.y[k])) continue;
        svg << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
      }
      svg << "\"/>\n";
      const int ly = y0 + 14 + static_cast<int>(si) * 16;
      svg << "<line x1=\"" << left + plot_w + 10 << "\" x2=\"" << left + plot_w + 30
          << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\"";
      if (s.dashed) svg << " stroke-dasharray=\"5,3\"";
      svg << "/>\n<text x=\"" << left + plot_w + 35 << "\" y=\"" << ly << "\">"
          << escape(s.label) << "</text>\n";
    }
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 4
      << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n</svg>\n";
  return svg.str();
}

void write_svg(const std::filesystem::path& path, const std::vector<PlotPanel>& panels,
               const std::string& x_label) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << render_svg(panels, x_label);
}

std::vector<PlotPanel> simlog_panels(const std::vector<std::pair<std::string, CsvTable>>& logs) {
  if (logs.empty()) throw InputError("simlog_panels: no logs");
  PlotPanel pim{"Intake manifold pressure", "p_im [bar]", {}};
  PlotPanel egr{"EGR rate", "egr rate [-]", {}};
  PlotPanel valve{"EGR valve", "% open", {}};
  PlotPanel vanes{"VGT vanes", "% closed", {}};
  for (const auto& [label, table] : logs) {
    const auto t = table.column_values("t");
    pim.series.push_back({label, t, table.column_values("p_im")});
    egr.series.push_back({label, t, table.column_values("egr_rate")});
    valve.series.push_back({label, t, table.column_values("egr_pos")});
    vanes.series.push_back({label, t, table.column_values("vgt_pos")});
  }
  // one target trace is enough; all logs share the cycle
  const auto& first = logs.front().second;
  const auto t = first.column_values("t");
  pim.series.push_back({"target", t, first.column_values("r_p_im"), true});
  egr.series.push_back({"target", t, first.column_values("r_egr_rate"), true});
  return {pim, egr, valve, vanes};
}

}  // namespace airpath
