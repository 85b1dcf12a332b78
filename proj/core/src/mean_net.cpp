#include "vmpo/mean_net.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

#include "vmpo/errors.hpp"

namespace vmpo {

MeanNet::MeanNet(std::size_t dim, std::size_t hidden, std::size_t steps,
                 std::size_t num_conditions, RngStream& init_rng)
    : dim_(dim), hidden_(hidden), steps_(steps), conditions_(num_conditions > 1 ? num_conditions : 0) {
  detail::require(dim >= 1 && hidden >= 1 && steps >= 1, "MeanNet: empty shape");
  params_.assign(b2() + dim_, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_size()));
  for (std::size_t i = 0; i < hidden_ * input_size(); ++i) params_[w1() + i] = scale * init_rng.normal();
}

void MeanNet::unflatten(std::span<const double> flat) {
  detail::require_shape(flat.size(), params_.size(), "MeanNet::unflatten");
  std::copy(flat.begin(), flat.end(), params_.begin());
}

Vec MeanNet::forward(std::span<const double> x_t, std::size_t t, int condition,
                     MeanNetCache& cache) const {
  detail::require_shape(x_t.size(), dim_, "MeanNet input");
  detail::require(t >= 1 && t <= steps_, "MeanNet: t outside [1, T]");
  const std::size_t n_in = input_size();
  cache.input.assign(n_in, 0.0);
  std::copy(x_t.begin(), x_t.end(), cache.input.begin());
  const double phase = 0.5 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(steps_);
  cache.input[dim_] = std::sin(phase);
  cache.input[dim_ + 1] = std::cos(phase);
  if (conditions_ > 0) {
    detail::require(condition >= 0 && static_cast<std::size_t>(condition) < conditions_,
                    "MeanNet: condition out of range");
    cache.input[dim_ + 2 + static_cast<std::size_t>(condition)] = 1.0;
  }

  cache.hidden.assign(hidden_, 0.0);
  for (std::size_t k = 0; k < hidden_; ++k) {
    double a = params_[b1() + k];
    const double* row = &params_[w1() + k * n_in];
    for (std::size_t l = 0; l < n_in; ++l) a += row[l] * cache.input[l];
    cache.hidden[k] = std::tanh(a);
  }
  Vec out(dim_);
  for (std::size_t j = 0; j < dim_; ++j) {
    double o = params_[b2() + j];
    const double* row = &params_[w2() + j * hidden_];
    for (std::size_t k = 0; k < hidden_; ++k) o += row[k] * cache.hidden[k];
    out[j] = o;
  }
  return out;
}

void MeanNet::backward(const MeanNetCache& cache, std::span<const double> adjoint,
                       std::span<double> grad) const {
  detail::require_shape(adjoint.size(), dim_, "MeanNet::backward adjoint");
  detail::require_shape(grad.size(), params_.size(), "MeanNet::backward grad");
  detail::require_shape(cache.hidden.size(), hidden_, "MeanNet::backward cache");
  const std::size_t n_in = input_size();
  for (std::size_t j = 0; j < dim_; ++j) {
    grad[b2() + j] += adjoint[j];
    for (std::size_t k = 0; k < hidden_; ++k) grad[w2() + j * hidden_ + k] += adjoint[j] * cache.hidden[k];
  }
  for (std::size_t k = 0; k < hidden_; ++k) {
    double dh = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) dh += params_[w2() + j * hidden_ + k] * adjoint[j];
    const double da = dh * (1.0 - cache.hidden[k] * cache.hidden[k]);
    grad[b1() + k] += da;
    for (std::size_t l = 0; l < n_in; ++l) grad[w1() + k * n_in + l] += da * cache.input[l];
  }
}

Matrix MeanNet::input_jacobian(const MeanNetCache& cache) const {
  const std::size_t n_in = input_size();
  Matrix J(dim_, dim_);
  for (std::size_t k = 0; k < hidden_; ++k) {
    const double d = 1.0 - cache.hidden[k] * cache.hidden[k];
    for (std::size_t j = 0; j < dim_; ++j) {
      const double a = params_[w2() + j * hidden_ + k] * d;
      for (std::size_t i = 0; i < dim_; ++i) J(j, i) += a * params_[w1() + k * n_in + i];
    }
  }
  return J;
}

void MeanNet::jacobian_backward(const MeanNetCache& cache, std::span<const double> u,
                                std::span<const double> w, std::span<double> grad) const {
  detail::require_shape(u.size(), dim_, "MeanNet::jacobian_backward u");
  detail::require_shape(w.size(), dim_, "MeanNet::jacobian_backward w");
  detail::require_shape(grad.size(), params_.size(), "MeanNet::jacobian_backward grad");
  // u^T J w = sum_k P_k D_k Q_k with P = W2^T u, Q = W1[:, x] w, D = 1 - h^2.
  const std::size_t n_in = input_size();
  for (std::size_t k = 0; k < hidden_; ++k) {
    const double h = cache.hidden[k];
    const double D = 1.0 - h * h;
    const double dD = -2.0 * h * D;
    double P = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) P += params_[w2() + j * hidden_ + k] * u[j];
    double Q = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) Q += params_[w1() + k * n_in + i] * w[i];

    for (std::size_t j = 0; j < dim_; ++j) grad[w2() + j * hidden_ + k] += u[j] * D * Q;
    for (std::size_t i = 0; i < dim_; ++i) grad[w1() + k * n_in + i] += P * D * w[i];
    const double g_pre = P * Q * dD;
    grad[b1() + k] += g_pre;
    for (std::size_t l = 0; l < n_in; ++l) grad[w1() + k * n_in + l] += g_pre * cache.input[l];
  }
}

// ---------------------------------------------------------------- param io

namespace {

constexpr std::array<char, 4> kMagic{'V', 'M', 'P', 'P'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InvalidArgument("read_params: truncated input");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_params(std::ostream& out, std::span<const double> params) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kParamFileVersion);
  put_le<std::uint64_t>(out, params.size());
  for (double v : params) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

Vec read_params(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidArgument("read_params: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kParamFileVersion) {
    throw InvalidArgument("read_params: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(in);
  Vec out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(std::bit_cast<double>(get_le<std::uint64_t>(in)));
  return out;
}

}  // namespace vmpo
