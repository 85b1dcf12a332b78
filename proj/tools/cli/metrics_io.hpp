#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vmpo/trainer.hpp"

namespace vmpo::cli {

inline constexpr std::string_view kMetricsHeader =
    "epoch,mean_reward,kl_to_ref,loss,ess,tv_to_tilt,seconds";

// Doubles are written with 17 significant digits so rows parse back
// bit-for-bit; tv_to_tilt is left empty when absent.
std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

// Throws std::runtime_error on a malformed header or row.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

}  // namespace vmpo::cli
