#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ternlm::nn {

inline constexpr double kNormEps = 1e-5;

// out_i = gain_i * x_i / sqrt(mean(x^2) + eps)
std::vector<double> rmsnorm(std::span<const double> x,
                            std::span<const double> gain,
                            double eps = kNormEps);

// Rotates pairs (v[2i], v[2i+1]) by position * theta^(-2i/d).
// Throws Errc::dimension for odd d.
std::vector<double> rope_rotate(std::span<const double> v, std::size_t position,
                                double theta);
// In-place variant; inverse rotates by the negated angle (the transpose).
void rope_rotate_inplace(std::span<double> v, std::size_t position,
                         double theta, bool inverse = false);

double silu(double z);

// Numerically stable in-place softmax.
void softmax_inplace(std::span<double> v);

// log(sum(exp(v))), stable.
double log_sum_exp(std::span<const double> v);

}  // namespace ternlm::nn
