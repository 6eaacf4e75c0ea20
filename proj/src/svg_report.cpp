#include <algorithm>
#include <cmath>
#include <sstream>

#include "pfnflow/eval_harness.hpp"

namespace pfnflow {

namespace {

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                          "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

}  // namespace

// Grouped bars per dataset plus an AVG group, with Avg Rank drawn as markers
// against a secondary axis on the right.
std::string render_svg(const BenchmarkReport& report) {
  const auto mm = report.mask_mean();
  std::vector<double> am, as;
  report.avg_column(am, as);
  const auto ranks = report.avg_ranks();

  const int n_methods = static_cast<int>(report.methods.size());
  const int n_groups = static_cast<int>(report.datasets.size()) + 1;  // + AVG

  const double bar_w = 14.0;
  const double group_gap = 24.0;
  const double group_w = n_methods * bar_w + group_gap;
  const double plot_w = n_groups * group_w;
  const double plot_h = 260.0;
  const double margin_l = 60.0, margin_r = 60.0, margin_t = 30.0,
               margin_b = 90.0;
  const double width = margin_l + plot_w + margin_r;
  const double height = margin_t + plot_h + margin_b;

  double max_mae = 0.0;
  for (int m = 0; m < n_methods; ++m) {
    for (std::size_t d = 0; d < report.datasets.size(); ++d) {
      if (!std::isnan(mm[m][d])) max_mae = std::max(max_mae, mm[m][d]);
    }
    if (!std::isnan(am[m])) max_mae = std::max(max_mae, am[m]);
  }
  if (max_mae <= 0.0) max_mae = 1.0;
  max_mae *= 1.15;
  double max_rank = 1.0;
  for (double r : ranks) {
    if (!std::isnan(r)) max_rank = std::max(max_rank, r);
  }
  max_rank += 0.5;

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << fmt(width, 0)
      << "' height='" << fmt(height, 0) << "' font-family='sans-serif' "
      << "font-size='11'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";

  auto ybar = [&](double v) { return margin_t + plot_h * (1.0 - v / max_mae); };
  auto yrank = [&](double v) { return margin_t + plot_h * (1.0 - v / max_rank); };

  // Axes.
  svg << "<line x1='" << margin_l << "' y1='" << margin_t + plot_h << "' x2='"
      << margin_l + plot_w << "' y2='" << margin_t + plot_h
      << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = max_mae * tick / 4.0;
    svg << "<text x='" << margin_l - 6 << "' y='" << ybar(v) + 4
        << "' text-anchor='end'>" << fmt(v, 2) << "</text>\n";
    svg << "<line x1='" << margin_l << "' y1='" << ybar(v) << "' x2='"
        << margin_l + plot_w << "' y2='" << ybar(v)
        << "' stroke='#dddddd'/>\n";
  }
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = max_rank * tick / 4.0;
    svg << "<text x='" << margin_l + plot_w + 8 << "' y='" << yrank(v) + 4
        << "' text-anchor='start' fill='#444444'>" << fmt(v, 1)
        << "</text>\n";
  }
  svg << "<text x='" << margin_l - 44 << "' y='" << margin_t + plot_h / 2
      << "' transform='rotate(-90 " << margin_l - 44 << " "
      << margin_t + plot_h / 2 << ")' text-anchor='middle'>OOS MAE</text>\n";
  svg << "<text x='" << margin_l + plot_w + 46 << "' y='"
      << margin_t + plot_h / 2 << "' transform='rotate(90 "
      << margin_l + plot_w + 46 << " " << margin_t + plot_h / 2
      << ")' text-anchor='middle' fill='#444444'>Avg Rank</text>\n";

  // Bars per group.
  for (int g = 0; g < n_groups; ++g) {
    const bool is_avg = g == n_groups - 1;
    const double gx = margin_l + g * group_w + group_gap / 2;
    const std::string label =
        is_avg ? "AVG" : report.datasets[static_cast<std::size_t>(g)];
    for (int m = 0; m < n_methods; ++m) {
      const double v = is_avg ? am[m] : mm[m][static_cast<std::size_t>(g)];
      if (std::isnan(v)) continue;
      const double x = gx + m * bar_w;
      svg << "<rect x='" << fmt(x, 1) << "' y='" << fmt(ybar(v), 1)
          << "' width='" << bar_w - 2 << "' height='"
          << fmt(margin_t + plot_h - ybar(v), 1) << "' fill='"
          << kPalette[m % 8] << "'/>\n";
    }
    svg << "<text x='" << fmt(gx + n_methods * bar_w / 2.0, 1) << "' y='"
        << margin_t + plot_h + 16 << "' text-anchor='middle'>" << label
        << "</text>\n";
  }

  // Avg Rank markers in a dedicated lane right of the AVG group.
  const double rank_x0 = margin_l + plot_w - group_w + group_gap / 2;
  for (int m = 0; m < n_methods; ++m) {
    if (std::isnan(ranks[m])) continue;
    const double x = rank_x0 + m * bar_w + bar_w / 2;
    svg << "<circle cx='" << fmt(x, 1) << "' cy='" << fmt(yrank(ranks[m]), 1)
        << "' r='4' fill='none' stroke='" << kPalette[m % 8]
        << "' stroke-width='2'/>\n";
  }

  // Legend.
  for (int m = 0; m < n_methods; ++m) {
    const double lx = margin_l + m * 140.0;
    const double ly = margin_t + plot_h + 44;
    svg << "<rect x='" << lx << "' y='" << ly - 9 << "' width='10' height='10' "
        << "fill='" << kPalette[m % 8] << "'/>\n";
    svg << "<text x='" << lx + 14 << "' y='" << ly << "'>" << report.methods[m];
    if (!std::isnan(ranks[m])) svg << " (rank " << fmt(ranks[m], 2) << ")";
    svg << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace pfnflow
