#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ternlm/matrix.hpp"

namespace ternlm::quant {

struct QuantizerParams {
  double epsilon = 1e-6;
  int q_b = 127;

  // Throws Errc::validation unless epsilon > 0 and q_b in [1, 127].
  void validate() const;
};

struct AbsmeanScale {
  double gamma = 0.0;
};

struct TernaryWeights {
  Matrix<std::int8_t> codes;  // values in {-1, 0, +1}
  AbsmeanScale scale;
};

// Per-token (per-row) symmetric int8 quantization of activations.
struct QuantizedActivations {
  Matrix<std::int8_t> codes;
  std::vector<double> betas;
  int q_b = 127;
};

// round-half-away-from-zero of x, clamped to [lo, hi].
int round_clip(double x, int lo, int hi);

// Mean absolute value over every entry. Throws Errc::dimension when empty.
AbsmeanScale absmean_scale(const MatrixD& w);

// Absmean ternarization: code = round_clip(w / (gamma + epsilon), -1, 1).
// The dequantized weight is gamma * code. epsilon = 0 is accepted here so
// exact scale invariance can be checked; an all-zero matrix then maps to 0.
TernaryWeights quantize_weights(const MatrixD& w, const QuantizerParams& p = {});

// beta = max |x| of the row (1 for an all-zero row);
// code = round_clip(x * q_b / beta, -q_b, q_b).
QuantizedActivations quantize_activations(const MatrixD& x,
                                          const QuantizerParams& p = {});

// out[t, j] = acc[t, j] * gamma * betas[t] / q_b
MatrixD dequantize_output(const Matrix<std::int32_t>& acc, double gamma,
                          std::span<const double> betas, int q_b);

// In-place quantize/dequantize round trips, used by training.
void fake_quantize_weights(MatrixD& w, const QuantizerParams& p);
void fake_quantize_activations(MatrixD& x, const QuantizerParams& p);

}  // namespace ternlm::quant
