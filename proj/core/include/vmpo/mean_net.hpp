#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>

#include "vmpo/matrix.hpp"
#include "vmpo/rng.hpp"

namespace vmpo {

// Activations kept from a forward pass; one per call, so concurrent
// forward/backward passes never share state.
struct MeanNetCache {
  Vec input;   // [x_t, time embedding, condition one-hot]
  Vec hidden;  // tanh(W1 input + b1)
};

// Two affine maps with a tanh between them, predicting a residual on the
// clean sample from (x_t, t, c). Parameters flatten as [W1 | b1 | W2 | b2],
// row-major. The output layer starts at zero.
class MeanNet {
 public:
  MeanNet(std::size_t dim, std::size_t hidden, std::size_t steps, std::size_t num_conditions,
          RngStream& init_rng);

  std::size_t dim() const { return dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t input_size() const { return dim_ + 2 + conditions_; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  Vec flatten() const { return params_; }
  void unflatten(std::span<const double> flat);

  Vec forward(std::span<const double> x_t, std::size_t t, int condition,
              MeanNetCache& cache) const;

  // Adds d<adjoint, output>/d theta into grad.
  void backward(const MeanNetCache& cache, std::span<const double> adjoint,
                std::span<double> grad) const;

  // d output / d x_t  (dim x dim).
  Matrix input_jacobian(const MeanNetCache& cache) const;

  // Adds d(u^T J w)/d theta into grad, J = input_jacobian.
  void jacobian_backward(const MeanNetCache& cache, std::span<const double> u,
                         std::span<const double> w, std::span<double> grad) const;

 private:
  std::size_t w1() const { return 0; }
  std::size_t b1() const { return hidden_ * input_size(); }
  std::size_t w2() const { return b1() + hidden_; }
  std::size_t b2() const { return w2() + dim_ * hidden_; }

  std::size_t dim_;
  std::size_t hidden_;
  std::size_t steps_;
  std::size_t conditions_;
  Vec params_;
};

// Flat parameter files: 16-byte header (magic "VMPP", uint32 version,
// uint64 count) followed by count little-endian IEEE-754 doubles.
inline constexpr std::uint32_t kParamFileVersion = 1;
void write_params(std::ostream& out, std::span<const double> params);
Vec read_params(std::istream& in);

}  // namespace vmpo
