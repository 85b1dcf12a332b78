#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "vmpo/trainer.hpp"

namespace vmpo::cli {

// Malformed or out-of-domain configuration. `line` is 0 when the problem is
// not tied to a single line (e.g. a cross-key invariant).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Flat `key = value` text, one pair per line; `#` starts a comment. Keys
// absent from the text keep their TrainConfig defaults.
TrainConfig parse_config_text(std::string_view text);
TrainConfig parse_config(const std::filesystem::path& path);

// Every key, one per line, in a form parse_config_text reads back to an
// identical config.
std::string serialise_config(const TrainConfig& config);

}  // namespace vmpo::cli
