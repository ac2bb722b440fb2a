#include "ternlm/kernels.hpp"

namespace ternlm::kernels {

MatrixD bitlinear_forward(const TernaryTensor& w, const MatrixD& x,
                          const quant::QuantizerParams& p) {
  if (x.cols() != w.cols())
    throw Error(Errc::dimension, "bitlinear_forward: input width " +
                                     std::to_string(x.cols()) + " != " +
                                     std::to_string(w.cols()));
  const auto qa = quant::quantize_activations(x, p);
  const auto acc = ternary_matmul(w, qa.codes);
  return quant::dequantize_output(acc, w.gamma(), qa.betas, qa.q_b);
}

MatrixD transpose(const MatrixD& m) {
  MatrixD t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

MatrixD linear_dense(const MatrixD& x, const MatrixD& w) {
  if (x.cols() != w.cols())
    throw Error(Errc::dimension, "linear: input width " +
                                     std::to_string(x.cols()) + " != " +
                                     std::to_string(w.cols()));
  return dense_matmul(x, transpose(w));
}

}  // namespace ternlm::kernels
