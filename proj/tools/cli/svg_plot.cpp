#include "cli/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vmpo::cli {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 80, kRight = 20, kTop = 40, kBottom = 60;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::pair<double, double> padded_range(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 1.0};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  if (b - a < 1e-12 * std::max(1.0, std::abs(a))) {
    const double pad = std::max(1.0, std::abs(a)) * 0.5;
    return {a - pad, b + pad};
  }
  return {a, b};
}

}  // namespace

std::string render_line_chart(std::string_view title, std::string_view x_label,
                              std::string_view y_label, const std::vector<double>& x,
                              const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("render_line_chart: x and y differ in length");
  const auto [x0, x1] = padded_range(x);
  const auto [y0, y1] = padded_range(y);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
       num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">" + escape(title) + "</text>\n";
  // Axes.
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) +
       "\" y2=\"" + num(kTop + ph) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
       num(kTop + ph) + "\" stroke=\"black\"/>\n";
  // Ticks at the ends and midpoint of each axis.
  for (double f : {0.0, 0.5, 1.0}) {
    const double xv = x0 + f * (x1 - x0);
    const double yv = y0 + f * (y1 - y0);
    s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kTop + ph + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 16) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + escape(x_label) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"13\" transform=\"rotate(-90 18 " + num(kTop + ph / 2) + ")\">" + escape(y_label) + "</text>\n";
  if (!x.empty()) {
    s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i) s += ' ';
      s += num(px(x[i])) + "," + num(py(y[i]));
    }
    s += "\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::filesystem::path> write_metric_plots(const std::filesystem::path& dir,
                                                      const std::vector<MetricsRow>& rows) {
  std::vector<double> epoch;
  for (const auto& r : rows) epoch.push_back(static_cast<double>(r.epoch));
  struct Series {
    const char* name;
    double (*get)(const MetricsRow&);
  };
  const Series series[] = {
      {"mean_reward", [](const MetricsRow& r) { return r.mean_reward; }},
      {"kl_to_ref", [](const MetricsRow& r) { return r.kl_to_ref; }},
      {"loss", [](const MetricsRow& r) { return r.loss; }},
      {"ess", [](const MetricsRow& r) { return r.ess; }},
      {"tv_to_tilt", [](const MetricsRow& r) { return r.tv_to_tilt.value_or(NAN); }},
      {"seconds", [](const MetricsRow& r) { return r.seconds; }},
  };
  const bool has_tv = !rows.empty() && rows.front().tv_to_tilt.has_value();
  std::vector<std::filesystem::path> written;
  for (const auto& s : series) {
    if (std::string_view(s.name) == "tv_to_tilt" && !has_tv) continue;
    std::vector<double> y;
    for (const auto& r : rows) y.push_back(s.get(r));
    const auto path = dir / (std::string(s.name) + ".svg");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << render_line_chart(s.name, "epoch", s.name, epoch, y);
    written.push_back(path);
  }
  return written;
}

}  // namespace vmpo::cli
