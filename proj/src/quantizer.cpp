#include "ternlm/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ternlm {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::dimension: return "dimension error";
    case Errc::validation: return "validation error";
    case Errc::corrupt_data: return "corrupt data";
    case Errc::bad_magic: return "bad magic";
    case Errc::unsupported_version: return "unsupported version";
    case Errc::truncated: return "truncated payload";
    case Errc::duplicate_tensor: return "duplicate tensor name";
    case Errc::overflow: return "accumulator overflow bound exceeded";
    case Errc::io: return "i/o error";
  }
  return "unknown error";
}

namespace quant {

namespace {

void require_finite(const MatrixD& m, const char* what) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.flat()[i]))
      throw Error(Errc::validation, std::string(what) +
                                        " contains a non-finite entry at index " +
                                        std::to_string(i));
  }
}

}  // namespace

void QuantizerParams::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw Error(Errc::validation, "epsilon must be a positive finite number");
  if (q_b < 1 || q_b > 127)
    throw Error(Errc::validation, "q_b must lie in [1, 127]");
}

int round_clip(double x, int lo, int hi) {
  // std::round rounds halfway cases away from zero.
  const double r = std::round(x);
  if (r < lo) return lo;
  if (r > hi) return hi;
  return static_cast<int>(r);
}

AbsmeanScale absmean_scale(const MatrixD& w) {
  if (w.empty()) throw Error(Errc::dimension, "absmean of an empty matrix");
  double sum = 0.0;
  for (double v : w.flat()) sum += std::abs(v);
  return {sum / static_cast<double>(w.size())};
}

TernaryWeights quantize_weights(const MatrixD& w, const QuantizerParams& p) {
  if (!(p.epsilon >= 0.0) || !std::isfinite(p.epsilon))
    throw Error(Errc::validation, "epsilon must be finite and non-negative");
  require_finite(w, "weight matrix");
  const AbsmeanScale scale = absmean_scale(w);
  const double denom = scale.gamma + p.epsilon;
  TernaryWeights out{Matrix<std::int8_t>(w.rows(), w.cols()), scale};
  if (denom == 0.0) return out;  // all-zero matrix with epsilon = 0
  auto src = w.flat();
  auto dst = out.codes.flat();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<std::int8_t>(round_clip(src[i] / denom, -1, 1));
  return out;
}

QuantizedActivations quantize_activations(const MatrixD& x,
                                          const QuantizerParams& p) {
  p.validate();
  require_finite(x, "activation matrix");
  QuantizedActivations out{Matrix<std::int8_t>(x.rows(), x.cols()),
                           std::vector<double>(x.rows()), p.q_b};
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    double beta = 0.0;
    for (double v : row) beta = std::max(beta, std::abs(v));
    if (beta == 0.0) beta = 1.0;
    out.betas[t] = beta;
    auto codes = out.codes.row(t);
    for (std::size_t j = 0; j < row.size(); ++j)
      codes[j] = static_cast<std::int8_t>(
          round_clip(row[j] * p.q_b / beta, -p.q_b, p.q_b));
  }
  return out;
}

MatrixD dequantize_output(const Matrix<std::int32_t>& acc, double gamma,
                          std::span<const double> betas, int q_b) {
  if (betas.size() != acc.rows())
    throw Error(Errc::dimension, "betas length " + std::to_string(betas.size()) +
                                     " does not match " +
                                     std::to_string(acc.rows()) + " rows");
  MatrixD out(acc.rows(), acc.cols());
  for (std::size_t t = 0; t < acc.rows(); ++t) {
    const double s = gamma * betas[t] / q_b;
    auto a = acc.row(t);
    auto o = out.row(t);
    for (std::size_t j = 0; j < a.size(); ++j) o[j] = a[j] * s;
  }
  return out;
}

void fake_quantize_weights(MatrixD& w, const QuantizerParams& p) {
  const TernaryWeights q = quantize_weights(w, p);
  auto dst = w.flat();
  auto codes = q.codes.flat();
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = q.scale.gamma * codes[i];
}

void fake_quantize_activations(MatrixD& x, const QuantizerParams& p) {
  require_finite(x, "activation matrix");
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    double beta = 0.0;
    for (double v : row) beta = std::max(beta, std::abs(v));
    if (beta == 0.0) beta = 1.0;
    for (double& v : row)
      v = round_clip(v * p.q_b / beta, -p.q_b, p.q_b) * beta / p.q_b;
  }
}

}  // namespace quant
}  // namespace ternlm
