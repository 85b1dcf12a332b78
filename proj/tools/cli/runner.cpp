#include "cli/runner.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <string_view>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <thread>

#include "cli/config.hpp"
#include "cli/metrics_io.hpp"
#include "cli/svg_plot.hpp"
#include "vmpo/errors.hpp"
#include "vmpo/verify.hpp"

namespace vmpo::cli {

namespace fs = std::filesystem;

std::vector<SweepCell> sweep_grid(const TrainConfig& base) {
  const ObjectiveKind kinds[] = {ObjectiveKind::VmpoAmortised, ObjectiveKind::VmpoMc,
                                 ObjectiveKind::VmpoClipped,   ObjectiveKind::Grpo,
                                 ObjectiveKind::DetailedBalance, ObjectiveKind::GradMatching};
  std::vector<SweepCell> cells;
  for (ObjectiveKind kind : kinds) {
    if (kind == ObjectiveKind::GradMatching && base.model == ModelKind::Tabular) continue;
    for (double factor : {0.5, 1.0, 2.0}) {
      SweepCell cell{base, {}};
      cell.config.objective.kind = kind;
      cell.config.objective.beta = base.objective.beta * factor;
      cell.config.objective.potential.beta = cell.config.objective.beta;
      char beta[32];
      std::snprintf(beta, sizeof beta, "%g", cell.config.objective.beta);
      cell.dir = fs::path(base.out_dir) / (std::string(to_string(kind)) + "_beta" + beta);
      cell.config.out_dir = cell.dir.string();
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::vector<MetricsRow> train_to_dir(const TrainConfig& config, const fs::path& dir, bool timing,
                                     bool plots) {
  Trainer trainer(config);
  trainer.set_timing(timing);
  const auto rows = trainer.run();
  fs::create_directories(dir);
  const auto csv = dir / "metrics.csv";
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  write_metrics_csv(out, rows);
  if (plots) write_metric_plots(dir, rows);
  return rows;
}

namespace {

int cmd_train(const std::string& path, bool timing, bool plots, std::ostream& out) {
  const TrainConfig cfg = parse_config(path);
  const auto rows = train_to_dir(cfg, cfg.out_dir, timing, plots);
  out << "wrote " << rows.size() << " rows to " << (fs::path(cfg.out_dir) / "metrics.csv").string() << '\n';
  return 0;
}

int cmd_verify(const std::string& path, std::ostream& out) {
  const TrainConfig cfg = parse_config(path);
  VerifySuiteOptions o;
  o.num_states = cfg.num_states;
  o.steps = cfg.steps;
  o.dim = cfg.dim;
  o.alpha_min = cfg.alpha_min;
  o.beta = cfg.objective.beta;
  o.seed = cfg.seed;
  bool ok = true;
  for (const auto& r : run_verify_suite(o)) {
    out << format_check_line(r) << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_sweep(const std::string& path, bool timing, bool plots, unsigned jobs, std::ostream& out) {
  const TrainConfig cfg = parse_config(path);
  const auto cells = sweep_grid(cfg);
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        train_to_dir(cells[i].config, cells[i].dir, timing, plots);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  int code = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (errors[i].empty()) {
      out << "cell " << cells[i].dir.string() << " ok\n";
    } else {
      out << "cell " << cells[i].dir.string() << " failed: " << errors[i] << '\n';
      code = 1;
    }
  }
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variance-minimisation alignment on toy diffusion chains", "vmpo"};
  app.require_subcommand(1);
  std::string config;
  bool timing = false;
  bool no_plot = false;
  unsigned jobs = 1;

  auto* train = app.add_subcommand("train", "train one config; writes <out_dir>/metrics.csv and plots");
  train->add_option("config", config, "config file")->required();
  train->add_flag("--timing", timing, "record wall-clock seconds (breaks byte-identical reruns)");
  train->add_flag("--no-plot", no_plot, "skip the SVG charts");

  auto* verify = app.add_subcommand("verify", "run every oracle check on the config's fixtures");
  verify->add_option("config", config, "config file")->required();

  auto* sweep = app.add_subcommand("sweep", "grid over beta x objective kinds");
  sweep->add_option("config", config, "config file")->required();
  sweep->add_flag("--timing", timing, "record wall-clock seconds");
  sweep->add_flag("--no-plot", no_plot, "skip the SVG charts");
  sweep->add_option("--jobs", jobs, "cells trained concurrently")->check(CLI::PositiveNumber);

  if (argc > 1) {
    const std::string_view first = argv[1];
    if (!first.starts_with('-') && first != "train" && first != "verify" && first != "sweep") {
      err << "error: unknown subcommand '" << first << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(config, timing, !no_plot, out);
    if (*verify) return cmd_verify(config, out);
    return cmd_sweep(config, timing, !no_plot, jobs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace vmpo::cli
