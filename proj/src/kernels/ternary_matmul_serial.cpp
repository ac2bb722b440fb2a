#include "check.hpp"

namespace ternlm::kernels {

Matrix<std::int32_t> ternary_matmul_serial(const TernaryTensor& w,
                                           const Matrix<std::int8_t>& x) {
  detail::check_ternary_shapes(w, x);
  Matrix<std::int32_t> acc(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto row = w.row(o);
      std::int32_t sum = 0;
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const std::uint8_t field = (row[j / 4] >> (2 * (j % 4))) & 0b11;
        if (field == kFieldPlus)
          sum += x(t, j);
        else if (field == kFieldMinus)
          sum -= x(t, j);
      }
      acc(t, o) = sum;
    }
  }
  return acc;
}

}  // namespace ternlm::kernels
