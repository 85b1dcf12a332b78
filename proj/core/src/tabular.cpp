#include "vmpo/tabular.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"

namespace vmpo {
namespace {

constexpr double kStochasticTol = 1e-10;

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    detail::require(v >= 0.0 && std::isfinite(v), what + ": negative or non-finite entry");
    total += v;
  }
  detail::require(std::abs(total - 1.0) <= kStochasticTol, what + ": does not sum to 1");
}

double safe_log(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

Vec tilt_row(std::span<const double> ref_row, std::span<const double> reward, double beta) {
  const std::size_t S = ref_row.size();
  Vec logits(S);
  for (std::size_t j = 0; j < S; ++j) logits[j] = safe_log(ref_row[j]) + reward[j] / beta;
  const double lse = log_sum_exp(logits);
  if (!std::isfinite(lse)) throw NumericError("exact_tilted_kernel: zero row normaliser");
  Vec out(S);
  for (std::size_t j = 0; j < S; ++j) out[j] = std::exp(logits[j] - lse);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- chain

TabularChain::TabularChain(std::vector<Matrix> ref_kernels, Vec prior, Vec reward)
    : kernels_(std::move(ref_kernels)), prior_(std::move(prior)), reward_(std::move(reward)) {
  const std::size_t S = prior_.size();
  detail::require(S >= 1, "tabular chain: need at least one state");
  detail::require(!kernels_.empty(), "tabular chain: need at least one step");
  detail::require(reward_.size() == S, "tabular chain: reward length != S");
  check_distribution(prior_, "tabular chain prior");
  for (std::size_t t = 0; t < kernels_.size(); ++t) {
    const Matrix& k = kernels_[t];
    detail::require(k.rows() == S && k.cols() == S, "tabular chain: kernel must be S x S");
    for (std::size_t x = 0; x < S; ++x) {
      check_distribution(k.row(x), "tabular chain kernel t=" + std::to_string(t + 1));
    }
  }
  for (double r : reward_) detail::require(std::isfinite(r), "tabular chain: non-finite reward");
}

const Matrix& TabularChain::ref_kernel(std::size_t t) const {
  detail::require(t >= 1 && t <= kernels_.size(), "ref_kernel: t outside [1, T]");
  return kernels_[t - 1];
}

// ---------------------------------------------------------------- policy

TabularPolicy::TabularPolicy(std::size_t num_states, std::size_t steps)
    : S_(num_states), T_(steps), logits_(num_states * num_states * steps, 0.0) {
  detail::require(num_states >= 1 && steps >= 1, "tabular policy: empty shape");
}

TabularPolicy TabularPolicy::from_reference(const TabularChain& chain) {
  return from_kernels(reference_kernels(chain));
}

TabularPolicy TabularPolicy::from_kernels(std::span<const Matrix> kernels) {
  detail::require(!kernels.empty(), "from_kernels: no kernels");
  const std::size_t S = kernels.front().rows();
  TabularPolicy policy(S, kernels.size());
  for (std::size_t t = 1; t <= kernels.size(); ++t) {
    const Matrix& k = kernels[t - 1];
    detail::require(k.rows() == S && k.cols() == S, "from_kernels: kernel must be S x S");
    for (std::size_t x = 0; x < S; ++x) {
      auto row = policy.logits(t, x);
      for (std::size_t j = 0; j < S; ++j) row[j] = safe_log(k(x, j));
    }
  }
  return policy;
}

std::size_t TabularPolicy::offset(std::size_t t, std::size_t x_t) const {
  detail::require(t >= 1 && t <= T_ && x_t < S_, "tabular policy: index out of range");
  return ((t - 1) * S_ + x_t) * S_;
}

std::span<double> TabularPolicy::logits(std::size_t t, std::size_t x_t) {
  return {logits_.data() + offset(t, x_t), S_};
}

std::span<const double> TabularPolicy::logits(std::size_t t, std::size_t x_t) const {
  return {logits_.data() + offset(t, x_t), S_};
}

Vec TabularPolicy::kernel_row(std::size_t t, std::size_t x_t) const {
  return softmax(logits(t, x_t));
}

Matrix TabularPolicy::kernel(std::size_t t) const {
  Matrix k(S_, S_);
  for (std::size_t x = 0; x < S_; ++x) {
    const Vec row = kernel_row(t, x);
    std::copy(row.begin(), row.end(), k.row(x).begin());
  }
  return k;
}

double TabularPolicy::log_prob(std::size_t t, std::size_t x_t, std::size_t x_prev) const {
  const auto row = logits(t, x_t);
  return row[x_prev] - log_sum_exp(row);
}

// ---------------------------------------------------------------- oracles

Matrix exact_tilted_kernel(const TabularChain& chain, std::size_t t, double beta) {
  return exact_tilted_kernel(chain, t, beta, chain.reward());
}

Matrix exact_tilted_kernel(const TabularChain& chain, std::size_t t, double beta,
                           std::span<const double> reward_prev) {
  detail::require(beta > 0.0, "exact_tilted_kernel: beta must be > 0");
  const std::size_t S = chain.num_states();
  detail::require_shape(reward_prev.size(), S, "exact_tilted_kernel reward");
  const Matrix& ref = chain.ref_kernel(t);
  Matrix out(S, S);
  for (std::size_t x = 0; x < S; ++x) {
    const Vec row = tilt_row(ref.row(x), reward_prev, beta);
    std::copy(row.begin(), row.end(), out.row(x).begin());
  }
  return out;
}

Matrix exact_soft_value(const TabularChain& chain, double beta) {
  detail::require(beta > 0.0, "exact_soft_value: beta must be > 0");
  const std::size_t S = chain.num_states();
  const std::size_t T = chain.steps();
  Matrix V(T + 1, S);
  for (std::size_t x = 0; x < S; ++x) V(0, x) = chain.reward()[x];
  Vec terms(S);
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix& ref = chain.ref_kernel(t);
    for (std::size_t x = 0; x < S; ++x) {
      for (std::size_t j = 0; j < S; ++j) terms[j] = safe_log(ref(x, j)) + V(t - 1, j) / beta;
      const double lse = log_sum_exp(terms);
      if (!std::isfinite(lse)) throw NumericError("exact_soft_value: non-finite backup");
      V(t, x) = beta * lse;
    }
  }
  return V;
}

std::vector<Matrix> soft_value_tilted_kernels(const TabularChain& chain, double beta) {
  const Matrix V = exact_soft_value(chain, beta);
  std::vector<Matrix> out;
  out.reserve(chain.steps());
  for (std::size_t t = 1; t <= chain.steps(); ++t) {
    out.push_back(exact_tilted_kernel(chain, t, beta, V.row(t - 1)));
  }
  return out;
}

double exact_kl(std::span<const double> p, std::span<const double> q) {
  detail::require_shape(q.size(), p.size(), "exact_kl");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    detail::require(p[i] >= 0.0 && q[i] >= 0.0, "exact_kl: negative probability");
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw InvalidArgument("exact_kl: p is not absolutely continuous w.r.t. q");
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc < 0.0 ? 0.0 : acc;
}

Vec exact_kl_grad(const TabularChain& chain, const TabularPolicy& policy, std::size_t t,
                  std::size_t x_t, double beta) {
  return exact_kl_grad(chain, policy, t, x_t, beta, chain.reward());
}

Vec exact_kl_grad(const TabularChain& chain, const TabularPolicy& policy, std::size_t t,
                  std::size_t x_t, double beta, std::span<const double> reward_prev) {
  const std::size_t S = chain.num_states();
  const Vec p = policy.kernel_row(t, x_t);
  const Vec q = tilt_row(chain.ref_kernel(t).row(x_t), reward_prev, beta);
  // d/dl_k sum_j p_j log(p_j/q_j) = p_k (g_k - E_p[g]),  g = log(p/q).
  Vec g(S, 0.0);
  double g_mean = 0.0;
  for (std::size_t j = 0; j < S; ++j) {
    if (p[j] == 0.0) continue;
    if (q[j] == 0.0) throw InvalidArgument("exact_kl_grad: policy leaves target support");
    g[j] = std::log(p[j] / q[j]);
    g_mean += p[j] * g[j];
  }
  Vec grad(S);
  for (std::size_t k = 0; k < S; ++k) grad[k] = p[k] * (g[k] - g_mean);
  return grad;
}

McEnumeration enumerate_mc_estimator(const TabularChain& chain, const TabularPolicy& policy,
                                     std::size_t t, std::size_t x_t, std::size_t group_size,
                                     double beta, std::span<const double> reward_prev) {
  const std::size_t S = chain.num_states();
  const std::size_t K = group_size;
  detail::require(K >= 2, "enumerate_mc_estimator: K must be >= 2");
  detail::require(beta > 0.0, "enumerate_mc_estimator: beta must be > 0");
  detail::require_shape(reward_prev.size(), S, "enumerate_mc_estimator reward");
  double tuples = 1.0;
  for (std::size_t i = 0; i < K; ++i) tuples *= static_cast<double>(S);
  if (tuples > static_cast<double>(kEnumerationLimit)) {
    throw SizeLimitError("enumerate_mc_estimator: S^K = " + std::to_string(tuples) +
                         " exceeds the enumeration limit");
  }

  const Vec p = policy.kernel_row(t, x_t);
  const auto ref = chain.ref_kernel(t).row(x_t);
  // Per-state log weight f(j) = log p_ref(j) - log p_theta(j) + r(j)/beta.
  Vec f(S, 0.0);
  for (std::size_t j = 0; j < S; ++j) {
    if (p[j] == 0.0) continue;
    if (ref[j] == 0.0) throw InvalidArgument("enumerate_mc_estimator: policy leaves reference support");
    f[j] = std::log(ref[j]) - std::log(p[j]) + reward_prev[j] / beta;
  }

  McEnumeration out{Vec(S, 0.0), 0.0, 0.0};
  double f_mean = 0.0;
  double f_sq = 0.0;
  for (std::size_t j = 0; j < S; ++j) {
    f_mean += p[j] * f[j];
    f_sq += p[j] * f[j] * f[j];
  }
  out.variance_loss = 0.5 * (f_sq - f_mean * f_mean);

  std::vector<std::size_t> tuple(K, 0);
  Vec advantage(K);
  const double inv_km1 = 1.0 / static_cast<double>(K - 1);
  const auto total = static_cast<std::size_t>(tuples);
  for (std::size_t n = 0; n < total; ++n) {
    double prob = 1.0;
    double group_mean = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      prob *= p[tuple[i]];
      group_mean += f[tuple[i]];
    }
    if (prob > 0.0) {
      group_mean /= static_cast<double>(K);
      double sq = 0.0;
      for (std::size_t i = 0; i < K; ++i) {
        advantage[i] = f[tuple[i]] - group_mean;
        sq += advantage[i] * advantage[i];
      }
      out.expected_loss += prob * 0.5 * inv_km1 * sq;
      // -(1/(K-1)) sum_i A_i grad log p(j_i),  grad log p(j) = e_j - p.
      for (std::size_t i = 0; i < K; ++i) {
        const double c = -prob * inv_km1 * advantage[i];
        for (std::size_t k = 0; k < S; ++k) out.expected_grad[k] -= c * p[k];
        out.expected_grad[tuple[i]] += c;
      }
    }
    for (std::size_t i = 0; i < K; ++i) {
      if (++tuple[i] < S) break;
      tuple[i] = 0;
    }
  }
  return out;
}

Vec enumerate_expected_grad_mc(const TabularChain& chain, const TabularPolicy& policy,
                               std::size_t t, std::size_t x_t, std::size_t group_size,
                               double beta) {
  return enumerate_mc_estimator(chain, policy, t, x_t, group_size, beta, chain.reward())
      .expected_grad;
}

std::vector<Vec> state_marginals(const TabularChain& chain, std::span<const Matrix> kernels) {
  const std::size_t S = chain.num_states();
  const std::size_t T = chain.steps();
  detail::require_shape(kernels.size(), T, "state_marginals kernels");
  std::vector<Vec> marg(T + 1, Vec(S, 0.0));
  marg[T] = chain.prior();
  for (std::size_t t = T; t >= 1; --t) {
    const Matrix& k = kernels[t - 1];
    for (std::size_t x = 0; x < S; ++x) {
      for (std::size_t j = 0; j < S; ++j) marg[t - 1][j] += marg[t][x] * k(x, j);
    }
  }
  return marg;
}

std::vector<Matrix> reference_kernels(const TabularChain& chain) {
  std::vector<Matrix> out;
  for (std::size_t t = 1; t <= chain.steps(); ++t) out.push_back(chain.ref_kernel(t));
  return out;
}

std::vector<Matrix> policy_kernels(const TabularPolicy& policy) {
  std::vector<Matrix> out;
  for (std::size_t t = 1; t <= policy.steps(); ++t) out.push_back(policy.kernel(t));
  return out;
}

// ---------------------------------------------------------------- text io

namespace {

void write_row(std::ostream& out, std::span<const double> row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ' ';
    out << row[i];
  }
  out << '\n';
}

Vec read_row(std::istream& in, std::size_t n, std::size_t& line_no) {
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    Vec row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) {
      throw InvalidArgument("read_chain: line " + std::to_string(line_no) + ": not a number");
    }
    if (row.size() != n) {
      throw InvalidArgument("read_chain: line " + std::to_string(line_no) + ": expected " +
                            std::to_string(n) + " values, got " + std::to_string(row.size()));
    }
    return row;
  }
  throw InvalidArgument("read_chain: unexpected end of input after line " +
                        std::to_string(line_no));
}

}  // namespace

void write_chain(std::ostream& out, const TabularChain& chain) {
  const auto old_flags = out.flags();
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  out << chain.num_states() << ' ' << chain.steps() << '\n';
  write_row(out, chain.prior());
  write_row(out, chain.reward());
  for (std::size_t t = 1; t <= chain.steps(); ++t) {
    const Matrix& k = chain.ref_kernel(t);
    for (std::size_t x = 0; x < k.rows(); ++x) write_row(out, k.row(x));
  }
  out.flags(old_flags);
  out.precision(old_precision);
}

TabularChain read_chain(std::istream& in) {
  std::size_t line_no = 0;
  const Vec header = read_row(in, 2, line_no);
  const double s_val = header[0];
  const double t_val = header[1];
  detail::require(s_val >= 1 && t_val >= 1 && s_val == std::floor(s_val) &&
                      t_val == std::floor(t_val),
                  "read_chain: header must be two positive integers");
  const auto S = static_cast<std::size_t>(s_val);
  const auto T = static_cast<std::size_t>(t_val);
  Vec prior = read_row(in, S, line_no);
  Vec reward = read_row(in, S, line_no);
  std::vector<Matrix> kernels;
  for (std::size_t t = 0; t < T; ++t) {
    Matrix k(S, S);
    for (std::size_t x = 0; x < S; ++x) {
      const Vec row = read_row(in, S, line_no);
      std::copy(row.begin(), row.end(), k.row(x).begin());
    }
    kernels.push_back(std::move(k));
  }
  return TabularChain(std::move(kernels), std::move(prior), std::move(reward));
}

}  // namespace vmpo
