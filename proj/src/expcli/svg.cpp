#include <algorithm>
#include <cmath>
#include <sstream>

#include "micropatch/experiment.hpp"

namespace micropatch {

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void pad(double& lo, double& hi) {
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void header(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
}

void y_axis(std::ostringstream& s, const Frame& f, const std::string& label) {
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << f.py(v) << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << f.py(v)
      << "\" stroke=\"#ddd\"/>\n"
      << "<text x=\"" << kLeft - 8 << "\" y=\"" << f.py(v) + 4 << "\" text-anchor=\"end\">" << std::round(v * 1000) / 1000
      << "</text>\n";
  }
  s << "<text transform=\"translate(18," << (kTop + kHeight - kBottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(label) << "</text>\n";
}

void legend(std::ostringstream& s, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 18 * static_cast<double>(i);
    s << "<rect x=\"" << kWidth - kRight + 15 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << colour(i)
      << "\"/>\n<text x=\"" << kWidth - kRight + 32 << "\" y=\"" << y + 10 << "\">" << escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& ser : series)
    for (const auto& [x, y] : ser.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  pad(x0, x1);
  pad(y0, y1);
  const Frame f{x0, x1, y0, y1};

  std::ostringstream s;
  header(s, title);
  y_axis(s, f, y_label);
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
    << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  std::vector<double> ticks;
  for (const auto& ser : series)
    for (const auto& p : ser.points) ticks.push_back(p.first);
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double t : ticks)
    s << "<text x=\"" << f.px(t) << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">" << t
      << "</text>\n";
  s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n";

  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    auto pts = series[i].points;
    std::sort(pts.begin(), pts.end());
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colour(i) << "\" points=\"";
    for (const auto& [x, y] : pts) s << f.px(x) << ',' << f.py(y) << ' ';
    s << "\"/>\n";
    for (const auto& [x, y] : pts)
      s << "<circle cx=\"" << f.px(x) << "\" cy=\"" << f.py(y) << "\" r=\"3\" fill=\"" << colour(i) << "\"/>\n";
  }
  legend(s, names);
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& series_names, const std::vector<BarGroup>& groups) {
  double y0 = 0.0, y1 = 0.0;
  for (const auto& g : groups)
    for (double v : g.values) y0 = std::min(y0, v), y1 = std::max(y1, v);
  pad(y0, y1);
  const Frame f{0.0, std::max<double>(1.0, static_cast<double>(groups.size())), y0, y1};

  std::ostringstream s;
  header(s, title);
  y_axis(s, f, y_label);
  s << "<line x1=\"" << kLeft << "\" y1=\"" << f.py(0) << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << f.py(0)
    << "\" stroke=\"black\"/>\n";
  const double slot = f.px(1) - f.px(0);
  const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(1, series_names.size()));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double left = f.px(static_cast<double>(gi)) + slot * 0.1;
    for (std::size_t k = 0; k < groups[gi].values.size(); ++k) {
      const double v = groups[gi].values[k];
      const double top = std::min(f.py(v), f.py(0));
      s << "<rect x=\"" << left + bar * static_cast<double>(k) << "\" y=\"" << top << "\" width=\"" << bar * 0.95
        << "\" height=\"" << std::abs(f.py(v) - f.py(0)) << "\" fill=\"" << colour(k) << "\"/>\n";
    }
    s << "<text x=\"" << left + slot * 0.4 << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">"
      << escape(groups[gi].label) << "</text>\n";
  }
  legend(s, series_names);
  s << "</svg>\n";
  return s.str();
}

}  // namespace micropatch
