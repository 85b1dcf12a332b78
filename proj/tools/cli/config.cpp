#include "cli/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vmpo/errors.hpp"

namespace vmpo::cli {

ConfigError::ConfigError(std::size_t line, const std::string& what)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view value, std::size_t line, std::string_view key) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(line, "invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
  }
  return out;
}

bool parse_switch(std::string_view value, std::size_t line, std::string_view key) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw ConfigError(line, "key '" + std::string(key) + "' expects on|off, got '" + std::string(value) + "'");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_config_text(std::string_view text) {
  TrainConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "missing key before '='");
    if (value.empty()) throw ConfigError(line_no, "missing value for key '" + std::string(key) + "'");
    if (!seen.emplace(key).second) throw ConfigError(line_no, "duplicate key '" + std::string(key) + "'");

    auto size = [&] { return parse_number<std::size_t>(value, line_no, key); };
    auto real = [&] { return parse_number<double>(value, line_no, key); };
    if (key == "model") {
      auto m = parse_model_kind(value);
      if (!m) throw ConfigError(line_no, "model must be tabular|gaussian, got '" + std::string(value) + "'");
      cfg.model = *m;
    } else if (key == "num_states") {
      cfg.num_states = size();
    } else if (key == "dim") {
      cfg.dim = size();
    } else if (key == "steps") {
      cfg.steps = size();
    } else if (key == "alpha_min") {
      cfg.alpha_min = real();
    } else if (key == "objective") {
      auto k = parse_objective_kind(value);
      if (!k) throw ConfigError(line_no, "unknown objective '" + std::string(value) + "'");
      cfg.objective.kind = *k;
    } else if (key == "potential") {
      auto k = parse_potential_kind(value);
      if (!k) throw ConfigError(line_no, "unknown potential '" + std::string(value) + "'");
      cfg.objective.potential.kind = *k;
    } else if (key == "beta") {
      cfg.objective.beta = real();
    } else if (key == "clip_eps") {
      cfg.objective.clip_eps = real();
    } else if (key == "kl_old_coeff") {
      cfg.objective.kl_old_coeff = real();
    } else if (key == "group_size") {
      cfg.group_size = size();
    } else if (key == "rollouts_per_epoch") {
      cfg.rollouts_per_epoch = size();
    } else if (key == "updates_per_epoch") {
      cfg.updates_per_epoch = size();
    } else if (key == "epochs") {
      cfg.epochs = size();
    } else if (key == "lr_theta") {
      cfg.lr_theta = real();
    } else if (key == "lr_phi") {
      cfg.lr_phi = real();
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(value, line_no, key);
    } else if (key == "reward_rescale") {
      cfg.reward_rescale = parse_switch(value, line_no, key);
    } else if (key == "eval_every") {
      cfg.eval_every = size();
    } else if (key == "out_dir") {
      cfg.out_dir = std::string(value);
    } else {
      throw ConfigError(line_no, "unknown key '" + std::string(key) + "'");
    }
  }
  cfg.objective.potential.beta = cfg.objective.beta;
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(0, std::string("domain error: ") + e.what());
  }
  return cfg;
}

TrainConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialise_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "model = " << to_string(c.model) << '\n'
      << "num_states = " << c.num_states << '\n'
      << "dim = " << c.dim << '\n'
      << "steps = " << c.steps << '\n'
      << "alpha_min = " << num(c.alpha_min) << '\n'
      << "objective = " << to_string(c.objective.kind) << '\n'
      << "potential = " << to_string(c.objective.potential.kind) << '\n'
      << "beta = " << num(c.objective.beta) << '\n'
      << "clip_eps = " << num(c.objective.clip_eps) << '\n'
      << "kl_old_coeff = " << num(c.objective.kl_old_coeff) << '\n'
      << "group_size = " << c.group_size << '\n'
      << "rollouts_per_epoch = " << c.rollouts_per_epoch << '\n'
      << "updates_per_epoch = " << c.updates_per_epoch << '\n'
      << "epochs = " << c.epochs << '\n'
      << "lr_theta = " << num(c.lr_theta) << '\n'
      << "lr_phi = " << num(c.lr_phi) << '\n'
      << "seed = " << c.seed << '\n'
      << "reward_rescale = " << (c.reward_rescale ? "on" : "off") << '\n'
      << "eval_every = " << c.eval_every << '\n'
      << "out_dir = " << c.out_dir << '\n';
  return out.str();
}

}  // namespace vmpo::cli
