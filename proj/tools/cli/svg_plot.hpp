#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vmpo/trainer.hpp"

namespace vmpo::cli {

// Standalone SVG line chart of y against x with labelled axes.
std::string render_line_chart(std::string_view title, std::string_view x_label,
                              std::string_view y_label, const std::vector<double>& x,
                              const std::vector<double>& y);

// Writes <metric>.svg into dir for every metric column present in rows.
// Returns the files written.
std::vector<std::filesystem::path> write_metric_plots(const std::filesystem::path& dir,
                                                      const std::vector<MetricsRow>& rows);

}  // namespace vmpo::cli
