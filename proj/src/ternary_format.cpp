#include "ternlm/ternary_format.hpp"

#include <string>

namespace ternlm {

namespace {

std::uint8_t encode(std::int8_t code, std::size_t r, std::size_t c) {
  switch (code) {
    case 0: return kFieldZero;
    case 1: return kFieldPlus;
    case -1: return kFieldMinus;
    default:
      throw Error(Errc::validation, "code " + std::to_string(code) +
                                        " at row " + std::to_string(r) +
                                        ", column " + std::to_string(c) +
                                        " is not ternary");
  }
}

[[noreturn]] void corrupt(const char* what, std::size_t r, std::size_t c) {
  throw Error(Errc::corrupt_data, std::string(what) + " at row " +
                                      std::to_string(r) + ", column " +
                                      std::to_string(c));
}

}  // namespace

TernaryTensor::TernaryTensor(std::size_t rows, std::size_t cols, double gamma,
                             std::vector<std::uint8_t> packed)
    : rows_(rows), cols_(cols), gamma_(gamma), packed_(std::move(packed)) {
  if (rows_ == 0 || cols_ == 0)
    throw Error(Errc::dimension, "ternary tensor must be non-empty");
  if (packed_.size() != rows_ * packed_row_bytes(cols_))
    throw Error(Errc::dimension,
                "packed buffer holds " + std::to_string(packed_.size()) +
                    " bytes, expected " +
                    std::to_string(rows_ * packed_row_bytes(cols_)));
}

void TernaryTensor::validate() const {
  const std::size_t rb = row_bytes();
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t b = 0; b < rb; ++b) {
      const std::uint8_t byte = packed_[r * rb + b];
      for (std::size_t f = 0; f < 4; ++f) {
        const std::size_t c = b * 4 + f;
        const std::uint8_t field = (byte >> (2 * f)) & 0b11;
        if (c >= cols_) {
          if (field != 0) corrupt("non-zero padding field", r, c);
        } else if (field == kFieldReserved) {
          corrupt("reserved field 0b11", r, c);
        }
      }
    }
  }
}

TernaryTensor pack(const Matrix<std::int8_t>& codes, double gamma) {
  const std::size_t rb = packed_row_bytes(codes.cols());
  std::vector<std::uint8_t> buf(codes.rows() * rb, 0);
  for (std::size_t r = 0; r < codes.rows(); ++r) {
    auto row = codes.row(r);
    for (std::size_t c = 0; c < row.size(); ++c)
      buf[r * rb + c / 4] |=
          static_cast<std::uint8_t>(encode(row[c], r, c) << (2 * (c % 4)));
  }
  return TernaryTensor(codes.rows(), codes.cols(), gamma, std::move(buf));
}

Matrix<std::int8_t> unpack(const TernaryTensor& t) {
  t.validate();
  Matrix<std::int8_t> out(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto src = t.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const std::uint8_t field = (src[c / 4] >> (2 * (c % 4))) & 0b11;
      dst[c] = field == kFieldPlus ? 1 : field == kFieldMinus ? -1 : 0;
    }
  }
  return out;
}

}  // namespace ternlm
