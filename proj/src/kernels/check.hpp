#pragma once

#include <string>

#include "ternlm/kernels.hpp"

namespace ternlm::kernels::detail {

inline void check_ternary_shapes(const TernaryTensor& w,
                                 const Matrix<std::int8_t>& x) {
  if (x.cols() != w.cols())
    throw Error(Errc::dimension, "ternary_matmul: activations have " +
                                     std::to_string(x.cols()) +
                                     " features, weights expect " +
                                     std::to_string(w.cols()));
  if (w.cols() >= kMaxReduction)
    throw Error(Errc::overflow, "ternary_matmul: reduction length " +
                                    std::to_string(w.cols()) + " reaches 2^24");
}

}  // namespace ternlm::kernels::detail
