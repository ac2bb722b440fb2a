#include <array>
#include <vector>

#include "check.hpp"

namespace ternlm::kernels {

namespace {

struct SignMasks {
  std::array<std::int8_t, 4> plus;
  std::array<std::int8_t, 4> minus;
};

// For each packed byte, all-ones masks selecting the +1 and -1 lanes.
constexpr std::array<SignMasks, 256> make_mask_table() {
  std::array<SignMasks, 256> t{};
  for (int b = 0; b < 256; ++b)
    for (int f = 0; f < 4; ++f) {
      const int field = (b >> (2 * f)) & 0b11;
      t[b].plus[f] = (field == kFieldPlus) ? -1 : 0;
      t[b].minus[f] = (field == kFieldMinus) ? -1 : 0;
    }
  return t;
}

constexpr auto kMasks = make_mask_table();

}  // namespace

Matrix<std::int32_t> ternary_matmul(const TernaryTensor& w,
                                    const Matrix<std::int8_t>& x) {
  detail::check_ternary_shapes(w, x);
  const std::size_t in = w.cols();
  const std::size_t out_rows = w.rows();
  const std::size_t tokens = x.rows();
  Matrix<std::int32_t> acc(tokens, out_rows);

#pragma omp parallel
  {
    // Row decode is amortised across all tokens.
    std::vector<std::int8_t> plus(in + 4), minus(in + 4);
#pragma omp for schedule(static)
    for (std::size_t o = 0; o < out_rows; ++o) {
      const auto row = w.row(o);
      for (std::size_t b = 0; b < row.size(); ++b) {
        const SignMasks& m = kMasks[row[b]];
        for (std::size_t f = 0; f < 4; ++f) {
          plus[4 * b + f] = m.plus[f];
          minus[4 * b + f] = m.minus[f];
        }
      }
      for (std::size_t t = 0; t < tokens; ++t) {
        const std::int8_t* xs = &x(t, 0);
        std::int32_t sum = 0;
        for (std::size_t j = 0; j < in; ++j)
          sum += static_cast<std::int32_t>(xs[j] & plus[j]) -
                 static_cast<std::int32_t>(xs[j] & minus[j]);
        acc(t, o) = sum;
      }
    }
  }
  return acc;
}

}  // namespace ternlm::kernels
