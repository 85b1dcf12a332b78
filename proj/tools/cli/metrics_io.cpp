#include "cli/metrics_io.hpp"

#include <charconv>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace vmpo::cli {
namespace {

void append(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

double to_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw std::runtime_error("metrics csv line " + std::to_string(line) + ": bad number '" +
                             std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  std::string out = std::to_string(row.epoch);
  for (double v : {row.mean_reward, row.kl_to_ref, row.loss, row.ess}) {
    out += ',';
    append(out, v);
  }
  out += ',';
  if (row.tv_to_tilt) append(out, *row.tv_to_tilt);
  out += ',';
  append(out, row.seconds);
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
  }
  if (lines.empty() || lines.front() != kMetricsHeader) {
    throw std::runtime_error("metrics csv: missing or wrong header");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string_view> f;
    std::size_t p = 0;
    while (true) {
      const auto c = lines[i].find(',', p);
      f.push_back(lines[i].substr(p, c == std::string_view::npos ? std::string_view::npos : c - p));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    if (f.size() != 7) {
      throw std::runtime_error("metrics csv line " + std::to_string(i + 1) + ": expected 7 fields");
    }
    MetricsRow r;
    std::size_t epoch = 0;
    auto [ptr, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), epoch);
    if (ec != std::errc() || ptr != f[0].data() + f[0].size()) {
      throw std::runtime_error("metrics csv line " + std::to_string(i + 1) + ": bad epoch");
    }
    r.epoch = epoch;
    r.mean_reward = to_double(f[1], i + 1);
    r.kl_to_ref = to_double(f[2], i + 1);
    r.loss = to_double(f[3], i + 1);
    r.ess = to_double(f[4], i + 1);
    if (!f[5].empty()) r.tv_to_tilt = to_double(f[5], i + 1);
    r.seconds = to_double(f[6], i + 1);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace vmpo::cli
