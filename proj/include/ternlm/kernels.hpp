#pragma once

#include <cstddef>
#include <cstdint>

#include "ternlm/matrix.hpp"
#include "ternlm/quantizer.hpp"
#include "ternlm/ternary_format.hpp"

namespace ternlm::kernels {

// Reduction length limit that keeps 127 * k inside an int32 accumulator.
inline constexpr std::size_t kMaxReduction = std::size_t{1} << 24;

// acc[t, o] = sum_j code(w)[o, j] * x[t, j], computed with additions and
// subtractions only. w is [out x in], x is [tokens x in]; the result is
// [tokens x out]. Parallel over output rows with OpenMP; every output cell is
// produced by exactly one thread so results do not depend on the team size.
// Precondition: w has passed TernaryTensor::validate().
Matrix<std::int32_t> ternary_matmul(const TernaryTensor& w,
                                    const Matrix<std::int8_t>& x);

// Single-threaded reference for ternary_matmul: decodes each field and
// branches on its sign.
Matrix<std::int32_t> ternary_matmul_serial(const TernaryTensor& w,
                                           const Matrix<std::int8_t>& x);

// quantize_activations -> ternary_matmul -> dequantize_output. No bias.
MatrixD bitlinear_forward(const TernaryTensor& w, const MatrixD& x,
                          const quant::QuantizerParams& p = {});

// Plain A * B with double accumulation in ascending-k order.
template <typename T>
MatrixD dense_matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw Error(Errc::dimension, "dense_matmul inner dimensions differ");
  MatrixD c(a.rows(), b.cols());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = &c(i, 0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = static_cast<double>(a(i, k));
      const T* brow = &b(k, 0);
      for (std::size_t j = 0; j < b.cols(); ++j)
        out[j] += aik * static_cast<double>(brow[j]);
    }
  }
  return c;
}

// x * w^T for a dense [out x in] weight; the full-precision counterpart of
// bitlinear_forward.
MatrixD linear_dense(const MatrixD& x, const MatrixD& w);

MatrixD transpose(const MatrixD& m);

struct BenchReport {
  std::size_t in = 0, out = 0, tokens = 0, reps = 0;
  std::uint64_t elements = 0;  // tokens * in * out multiply-accumulates
  std::uint64_t ternary_weight_bytes = 0;
  std::uint64_t f32_weight_bytes = 0;
  std::uint64_t fp16_weight_bytes = 0;  // FP16-equivalent storage of the same weights
  double ternary_seconds = 0.0;         // medians over reps
  double ternary_serial_seconds = 0.0;
  double dense_seconds = 0.0;
  double ternary_elements_per_s = 0.0;
  double ternary_serial_elements_per_s = 0.0;
  double dense_elements_per_s = 0.0;
};

BenchReport kernel_bench(std::size_t in, std::size_t out, std::size_t tokens,
                         std::size_t reps, std::uint64_t seed = 1);

}  // namespace ternlm::kernels
