#include "ternlm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ternlm/error.hpp"

namespace ternlm::nn {

std::vector<double> rmsnorm(std::span<const double> x,
                            std::span<const double> gain, double eps) {
  if (x.size() != gain.size())
    throw Error(Errc::dimension, "rmsnorm: gain length " +
                                     std::to_string(gain.size()) + " != " +
                                     std::to_string(x.size()));
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double r = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] * r);
  return out;
}

void rope_rotate_inplace(std::span<double> v, std::size_t position,
                         double theta, bool inverse) {
  const std::size_t d = v.size();
  if (d % 2 != 0)
    throw Error(Errc::dimension, "rope: odd head dimension " + std::to_string(d));
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / d);
    double angle = static_cast<double>(position) * freq;
    if (inverse) angle = -angle;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = v[2 * i], b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

std::vector<double> rope_rotate(std::span<const double> v, std::size_t position,
                                double theta) {
  std::vector<double> out(v.begin(), v.end());
  rope_rotate_inplace(out, position, theta);
  return out;
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

}  // namespace ternlm::nn
