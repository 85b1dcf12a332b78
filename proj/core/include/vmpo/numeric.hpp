#pragma once

#include <span>
#include <vector>

namespace vmpo {

// log(sum(exp(x))) with max subtraction; -inf for empty or all -inf input.
double log_sum_exp(std::span<const double> x);

// Normalised probabilities exp(x - lse(x)). Throws NumericError if the
// normaliser is not finite.
std::vector<double> softmax(std::span<const double> logits);

double mean(std::span<const double> x);

// Half the L1 distance between two probability vectors.
double total_variation(std::span<const double> p, std::span<const double> q);

}  // namespace vmpo
