// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli/config.hpp"
#include "vmpo/numeric.hpp"
#include "vmpo/trainer.hpp"
#include "vmpo/verify.hpp"

using namespace vmpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_row_tv(const TabularPolicy& policy, const std::vector<Matrix>& target) {
  double worst = 0.0;
  for (std::size_t t = 1; t <= policy.steps(); ++t)
    for (std::size_t x = 0; x < policy.num_states(); ++x)
      worst = std::max(worst, total_variation(policy.kernel_row(t, x), target[t - 1].row(x)));
  return worst;
}

// Tabular fixtures with S <= 4, T <= 3 and a random policy per fixture.
template <class F>
void for_each_fixture(F&& f) {
  for (std::size_t S = 2; S <= 4; ++S)
    for (std::size_t T = 1; T <= 3; ++T)
      for (std::size_t K = 2; K <= 3; ++K) {
        const auto chain = make_standard_tabular_chain(S, T);
        RngStream rng(100 * S + 10 * T + K, 0);
        f(chain, random_tabular_policy(S, T, rng), K);
      }
}

Outcome criterion1() {
  double worst = 0.0;
  bool pass = true;
  for_each_fixture([&](const TabularChain& chain, const TabularPolicy& policy, std::size_t K) {
    const auto rep = check_prop1_gradient_identity(chain, policy, 0.5, K);
    worst = std::max(worst, rep.max_err);
    pass = pass && rep.pass;
  });
  return {pass && worst < 1e-9, "max_err=" + fmt("%.3e", worst)};
}

Outcome criterion2() {
  double min_bias = INFINITY, max_bias = 0.0, max_gap = 0.0;
  for_each_fixture([&](const TabularChain& chain, const TabularPolicy& policy, std::size_t K) {
    const auto rep = check_biased_loss_unbiased_grad(chain, 0.5, K, &policy);
    min_bias = std::min(min_bias, rep.loss_bias);
    max_bias = std::max(max_bias, rep.loss_bias);
    max_gap = std::max(max_gap, rep.grad_gap);
  });
  return {min_bias > 1e-4 && max_gap < 1e-9,
          "loss_bias_min=" + fmt("%.3e", min_bias) + " loss_bias_max=" + fmt("%.3e", max_bias) +
              " grad_gap=" + fmt("%.3e", max_gap)};
}

Outcome criterion3() {
  TrainConfig c;
  c.epochs = 2000;
  c.eval_every = 2000;
  c.objective.beta = 0.5;
  double tv[2];
  double secs[2];
  const ObjectiveKind kinds[2] = {ObjectiveKind::VmpoAmortised, ObjectiveKind::DetailedBalance};
  for (int k = 0; k < 2; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    c.objective.kind = kinds[k];
    Trainer trainer(c);
    trainer.run();
    tv[k] = max_row_tv(*trainer.tabular_policy(),
                       soft_value_tilted_kernels(*trainer.tabular_chain(), c.objective.beta));
    secs[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return {tv[0] < 1e-3 && tv[1] < 1e-6 && secs[0] < 60 && secs[1] < 60,
          "tv_amortised=" + fmt("%.3e", tv[0]) + " tv_detailed_balance=" + fmt("%.3e", tv[1]) +
              " secs=" + fmt("%.2f", secs[0]) + "/" + fmt("%.2f", secs[1])};
}

Outcome criterion4() {
  const auto chain = make_standard_tabular_chain(4, 3);
  RngStream rng(4, 0);
  double min_slack = INFINITY;
  for (int i = 0; i < 100; ++i) {
    const auto policy = random_tabular_policy(4, 3, rng);
    for (auto kind : {PotentialKind::ReturnToGo, PotentialKind::Difference}) {
      PotentialSpec spec;
      spec.kind = kind;
      spec.beta = 0.5;
      min_slack = std::min(min_slack, check_variance_bound(chain, policy, spec).slack);
    }
  }
  const auto single = make_standard_tabular_chain(4, 1);
  double t1 = 0.0;
  for (int i = 0; i < 20; ++i) {
    PotentialSpec spec;
    spec.beta = 0.5;
    t1 = std::max(t1, std::abs(check_variance_bound(single, random_tabular_policy(4, 1, rng), spec).slack));
  }
  return {min_slack >= -1e-10 && t1 < 1e-10,
          "min_slack=" + fmt("%.3e", min_slack) + " t1_abs_slack=" + fmt("%.3e", t1)};
}

Outcome criterion5() {
  const auto chain = make_standard_tabular_chain(4, 3);
  RngStream prng(5, 0);
  const auto policy = random_tabular_policy(4, 3, prng);
  const auto gchain = make_mixture_toy_chain(2, 5, 0.3);
  RngStream ginit(5, 1);
  const GaussianPolicy gpolicy(gchain, {}, ginit);
  double worst = 0.0;
  for (auto kind : {PotentialKind::ReturnToGo, PotentialKind::Difference}) {
    PotentialSpec spec;
    spec.kind = kind;
    spec.beta = 0.5;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      RngStream rng(6, i);
      worst = std::max(worst, std::abs(check_potential_constraint(spec, sample_trajectory(chain, policy, spec, rng))));
      worst = std::max(worst, std::abs(check_potential_constraint(spec, sample_trajectory(gchain, gpolicy, spec, rng))));
    }
  }
  return {worst < 1e-12, "max_err=" + fmt("%.3e", worst)};
}

Outcome criterion6() {
  const double lambda = 2.0, center = 1.0, beta = 1.0;
  const auto chain = make_quadratic_chain(3, 0.3, lambda, center);
  RngStream init(7, 0);
  const auto tilted = quadratic_tilted_policy(chain, lambda, Vec{center}, beta, init);
  RngStream rng(7, 1);
  const auto batch = rollout(chain, tilted, 64, rng);
  const double at_tilt = grad_matching_loss(chain, tilted, batch, beta, GradSide::Prev).value;

  TrainConfig c;
  c.model = ModelKind::Gaussian;
  c.dim = 1;
  c.steps = 3;
  c.objective.kind = ObjectiveKind::GradMatching;
  c.objective.beta = beta;
  c.lr_theta = c.lr_phi = 0.01;
  c.updates_per_epoch = 2;
  c.epochs = 2500;
  GaussianPolicyOptions opts;
  opts.learn_variance = true;
  Trainer trainer(c, chain, opts);
  std::size_t reached = 0;
  while (trainer.epochs_done() < c.epochs) {
    const auto row = trainer.run_epoch();
    if (!row) continue;
    if (reached == 0 && row->loss < 1e-4) reached = trainer.epochs_done() * c.updates_per_epoch;
  }
  // Independent check on fresh rollouts from the trained policy.
  RngStream fresh(7, 2);
  const auto check = rollout(chain, *trainer.gaussian_policy(), 256, fresh);
  const double final_loss = grad_matching_loss(chain, *trainer.gaussian_policy(), check, beta, GradSide::Prev).value;
  return {at_tilt < 1e-8 && reached > 0 && reached <= 5000 && final_loss < 1e-4,
          "loss_at_tilt=" + fmt("%.3e", at_tilt) + " steps_to_1e-4=" + std::to_string(reached) +
              " fresh_loss=" + fmt("%.3e", final_loss)};
}

Outcome criterion7() {
  double worst = 0.0;
  bool pass = true;
  std::size_t n = 0;
  for (const auto& r : run_verify_suite({})) {
    if (r.name.rfind("fd_", 0) != 0) continue;
    ++n;
    pass = pass && r.pass;
    worst = std::max(worst, r.max_err);
  }
  return {pass && n >= 8, "checks=" + std::to_string(n) + " max_rel_err=" + fmt("%.3e", worst)};
}

Outcome criterion8() {
  const auto base = cli::parse_config(fs::path(VMPO_CONFIG_DIR) / "gaussian_toy.cfg");
  const std::size_t w = 20;
  auto smooth_at = [&](const std::vector<MetricsRow>& rows, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end + 1 - w; i <= end; ++i) s += rows[i].mean_reward;
    return s / static_cast<double>(w);
  };
  std::vector<std::vector<MetricsRow>> runs;
  const ObjectiveKind kinds[3] = {ObjectiveKind::VmpoAmortised, ObjectiveKind::VmpoClipped, ObjectiveKind::Grpo};
  std::ostringstream detail;
  bool pass = true;
  for (auto kind : kinds) {
    TrainConfig c = base;
    c.objective.kind = kind;
    c.objective.potential.kind = PotentialKind::Difference;
    runs.push_back(train(c));
    const auto& rows = runs.back();
    const double first = smooth_at(rows, w - 1), last = smooth_at(rows, rows.size() - 1);
    pass = pass && rows.size() == base.epochs && last > first;
    detail << to_string(kind) << "=" << fmt("%.3f", first) << "->" << fmt("%.3f", last) << " ";
  }
  const auto& vmpo = runs[0];
  const auto& grpo = runs[2];
  const double grpo_final = smooth_at(grpo, grpo.size() - 1);
  std::size_t hit = 0;
  for (std::size_t e = w - 1; e < vmpo.size(); ++e) {
    if (smooth_at(vmpo, e) >= grpo_final) {
      hit = e + 1;
      break;
    }
  }
  const double ratio = hit ? static_cast<double>(hit) / static_cast<double>(grpo.size()) : INFINITY;
  detail << "epochs_to_grpo_final=" << hit << " ratio=" << fmt("%.3f", ratio);
  return {pass && ratio <= 0.75, detail.str()};
}

Outcome criterion9() {
  const fs::path dir = fs::temp_directory_path() / "vmpo_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ifstream in(fs::path(VMPO_CONFIG_DIR) / "default.cfg");
  std::stringstream text;
  text << in.rdbuf();
  std::string outputs[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path out = dir / ("run" + std::to_string(k));
    const fs::path cfg = dir / ("run" + std::to_string(k) + ".cfg");
    // Same config, separate output directory per run.
    std::stringstream lines(text.str()), rebuilt;
    std::string line;
    while (std::getline(lines, line))
      if (line.rfind("out_dir", 0) != 0) rebuilt << line << '\n';
    rebuilt << "out_dir = " << out.string() << '\n';
    std::ofstream(cfg) << rebuilt.str();
    const std::string cmd = std::string("\"") + VMPO_CLI_PATH + "\" train \"" + cfg.string() + "\" --no-plot > \"" +
                            (dir / "log.txt").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "train exited nonzero"};
    std::ifstream csv(out / "metrics.csv", std::ios::binary);
    std::stringstream s;
    s << csv.rdbuf();
    outputs[k] = s.str();
  }
  const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
  return {same, "bytes=" + std::to_string(outputs[0].size()) + " identical=" + (same ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient_identity", 5, criterion1},
      {2, "biased_loss_unbiased_grad", 5, criterion2},
      {3, "tabular_optimum", 120, criterion3},
      {4, "trajectory_variance_bound", 10, criterion4},
      {5, "potential_constraint", 1e9, criterion5},
      {6, "grad_matching_closed_form", 120, criterion6},
      {7, "finite_differences", 1e9, criterion7},
      {8, "gaussian_toy_reward_curves", 300, criterion8},
      {9, "cli_determinism", 1e9, criterion9},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.budget_s;
    failures += pass ? 0 : 1;
    std::printf("%s criterion=%d name=%s %s elapsed_s=%.2f\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
