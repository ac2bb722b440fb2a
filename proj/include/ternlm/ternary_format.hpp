#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ternlm/matrix.hpp"

namespace ternlm {

// 2-bit field values. 0b11 is reserved and always rejected.
inline constexpr std::uint8_t kFieldZero = 0b00;
inline constexpr std::uint8_t kFieldPlus = 0b01;
inline constexpr std::uint8_t kFieldMinus = 0b10;
inline constexpr std::uint8_t kFieldReserved = 0b11;

constexpr std::size_t packed_row_bytes(std::size_t cols) {
  return (cols + 3) / 4;
}

// Ternary weight matrix packed at 4 codes per byte. Weight j of a row sits in
// bits [2*(j%4), 2*(j%4)+1] of byte j/4 of that row; rows are byte aligned
// and padding fields are zero.
class TernaryTensor {
 public:
  TernaryTensor() = default;
  // Checks shape and buffer length only; field contents are checked by
  // validate() / unpack().
  TernaryTensor(std::size_t rows, std::size_t cols, double gamma,
                std::vector<std::uint8_t> packed);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t row_bytes() const noexcept { return packed_row_bytes(cols_); }
  double gamma() const noexcept { return gamma_; }
  std::span<const std::uint8_t> bytes() const noexcept { return packed_; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return {packed_.data() + r * row_bytes(), row_bytes()};
  }

  // Throws Errc::corrupt_data naming the first reserved or non-zero padding
  // field found.
  void validate() const;

  bool operator==(const TernaryTensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double gamma_ = 0.0;
  std::vector<std::uint8_t> packed_;
};

TernaryTensor pack(const Matrix<std::int8_t>& codes, double gamma = 1.0);
Matrix<std::int8_t> unpack(const TernaryTensor& t);

}  // namespace ternlm
