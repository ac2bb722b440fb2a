#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ternlm/config.hpp"

namespace ternlm {

enum class DType : std::uint8_t { F32 = 0, I8 = 1, TERNARY_PACKED = 2 };

const char* to_string(DType d);

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::optional<double> scale;  // present iff dtype == TERNARY_PACKED
  std::vector<std::uint8_t> payload;

  // Byte length the payload must have for dtype and dims.
  std::uint64_t expected_payload_bytes() const;

  bool operator==(const TensorRecord&) const = default;
};

// On-disk container, all integers little-endian:
//   "B158" | u32 version=1 | u32 json_len | json config
//   | u32 tensor_count | records...
// record: u32 name_len | name | u8 dtype | u32 ndims | u64 dims[ndims]
//   | f64 scale (TERNARY_PACKED only) | u64 payload_len | payload
struct ModelFile {
  static constexpr std::uint32_t kVersion = 1;

  TransformerConfig config;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;

  bool operator==(const ModelFile&) const = default;
};

std::uint64_t write_model(const ModelFile& m, std::ostream& sink);
ModelFile read_model(std::istream& source);

// Writes to a sibling temporary file and renames it into place, so a failed
// write never leaves a partial file at `path`.
std::uint64_t save_model(const ModelFile& m, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

// Helpers for F32 payloads.
TensorRecord make_f32_record(std::string name, std::vector<std::uint64_t> dims,
                             const std::vector<double>& values);
std::vector<double> f32_values(const TensorRecord& rec);

}  // namespace ternlm
