#include "ternlm/config.hpp"

#include <cmath>

#include "ternlm/error.hpp"

namespace ternlm {

void TransformerConfig::validate() const {
  if (vocab == 0 || hidden == 0 || layers == 0 || heads == 0 || ffn_dim == 0 ||
      max_seq == 0)
    throw Error(Errc::validation, "transformer dimensions must be positive");
  if (!(rope_theta > 0.0) || !std::isfinite(rope_theta))
    throw Error(Errc::validation, "rope_theta must be positive");
  if (hidden % heads != 0)
    throw Error(Errc::validation, "hidden must be divisible by heads");
  if (head_dim() % 2 != 0)
    throw Error(Errc::validation, "head dimension must be even for RoPE");
}

nlohmann::json to_json(const TransformerConfig& cfg) {
  return {{"vocab", cfg.vocab},       {"hidden", cfg.hidden},
          {"layers", cfg.layers},     {"heads", cfg.heads},
          {"ffn_dim", cfg.ffn_dim},   {"max_seq", cfg.max_seq},
          {"rope_theta", cfg.rope_theta}};
}

TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig cfg;
  try {
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    cfg.max_seq = j.value("max_seq", cfg.max_seq);
    cfg.rope_theta = j.value("rope_theta", cfg.rope_theta);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, std::string("bad transformer config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace ternlm
