#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace ternlm {

struct TransformerConfig {
  std::size_t vocab = 256;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t max_seq = 32;
  double rope_theta = 10000.0;

  std::size_t head_dim() const { return hidden / heads; }

  // Throws Errc::validation on a non-positive field, hidden % heads != 0 or
  // an odd head dimension.
  void validate() const;

  bool operator==(const TransformerConfig&) const = default;
};

nlohmann::json to_json(const TransformerConfig& cfg);
TransformerConfig config_from_json(const nlohmann::json& j);

}  // namespace ternlm
