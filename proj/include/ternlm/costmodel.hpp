#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ternlm/config.hpp"

namespace ternlm::cost {

enum class Mode { fp16, ternary };

const char* to_string(Mode m);

// Per-operation arithmetic energy in picojoules. The defaults give a per-MAC
// ratio (fp16_add + fp16_mul) / int8_add of 0.50 / 0.007 = 71.43 at 7nm.
struct EnergyConstants {
  double fp16_add = 0.16;
  double fp16_mul = 0.34;
  double int8_add = 0.007;
  std::string process_node = "7nm";

  void validate() const;
  double per_mac(Mode m) const;
  double per_mac_ratio() const { return per_mac(Mode::fp16) / per_mac(Mode::ternary); }
};

EnergyConstants constants_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnergyConstants& c);

// m * k * n multiply-accumulates at the per-MAC cost of `mode`.
double matmul_energy(std::uint64_t m, std::uint64_t k, std::uint64_t n, Mode mode,
                     const EnergyConstants& c = {});

struct EnergyOptions {
  // Charge QK^T and PV products at FP16 rates in both modes.
  bool include_attention_scores = false;
};

struct ParamCounts {
  std::uint64_t block_linear = 0;  // q, k, v, o, gate, up, down across layers
  std::uint64_t embedding = 0;
  std::uint64_t head = 0;
  std::uint64_t norms = 0;
  std::uint64_t total() const { return block_linear + embedding + head + norms; }
};

ParamCounts param_counts(const TransformerConfig& cfg);

// Weight matmuls for one token: 4*hidden^2 + 3*hidden*ffn_dim per layer
// plus vocab*hidden for the head. The head stays full precision in both
// modes; the embedding is a lookup and costs no arithmetic.
double model_energy_per_token(const TransformerConfig& cfg, Mode mode,
                              const EnergyConstants& c = {});

// tokens * per-token energy, plus attention scores when requested.
double sequence_energy(const TransformerConfig& cfg, std::uint64_t tokens, Mode mode,
                       const EnergyConstants& c = {}, const EnergyOptions& opt = {});

struct MemoryBreakdown {
  std::uint64_t quantized_eligible_bytes = 0;  // block linears
  std::uint64_t full_precision_bytes = 0;      // embedding, head, norm gains
  std::uint64_t total() const { return quantized_eligible_bytes + full_precision_bytes; }
};

// Weights only. FP16 stores 2 bytes per parameter; ternary stores block
// linears as rows * ceil(cols / 4) packed bytes.
MemoryBreakdown model_memory_bytes(const TransformerConfig& cfg, Mode mode);

struct CostReport {
  std::string model_label;
  std::uint64_t tokens = 0;
  std::uint64_t parameters = 0;
  std::uint64_t weight_bytes_fp16 = 0;
  std::uint64_t weight_bytes_ternary = 0;
  std::uint64_t block_linear_bytes_fp16 = 0;
  std::uint64_t block_linear_bytes_ternary = 0;
  double arithmetic_energy_fp16_pJ = 0.0;
  double arithmetic_energy_ternary_pJ = 0.0;
  double memory_ratio = 0.0;  // fp16 / ternary
  double energy_ratio = 0.0;  // fp16 / ternary
};

CostReport cost_report(const std::string& label, const TransformerConfig& cfg,
                       std::uint64_t tokens, const EnergyConstants& c = {},
                       const EnergyOptions& opt = {});

inline constexpr const char* kLatencyNote = "not modeled (measured-only)";

nlohmann::json to_json(const CostReport& r);
std::string format_table(const std::vector<CostReport>& rows);

enum class Verdict { first_better, second_better, tie };
const char* to_string(Verdict v);

struct ParetoResult {
  Verdict energy = Verdict::tie;
  Verdict memory = Verdict::tie;
  // First is no worse on both metrics and strictly better on at least one.
  bool first_dominates = false;
  double energy_first_pJ = 0.0, energy_second_pJ = 0.0;
  std::uint64_t memory_first = 0, memory_second = 0;
};

// Energy per token and weight bytes of (a, mode_a) against (b, mode_b).
ParetoResult pareto_compare(const TransformerConfig& a, Mode mode_a,
                            const TransformerConfig& b, Mode mode_b,
                            const EnergyConstants& c = {});
// The usual question: ternary a against fp16 b.
ParetoResult pareto_compare(const TransformerConfig& ternary_cfg,
                            const TransformerConfig& fp16_cfg,
                            const EnergyConstants& c = {});
nlohmann::json to_json(const ParetoResult& r);

// Shipped size labels, smallest to largest.
const std::vector<std::string>& size_labels();
std::filesystem::path default_config_dir();
// Throws Errc::validation for an unknown label, Errc::io if unreadable.
TransformerConfig load_size_config(const std::string& label,
                                   const std::filesystem::path& dir = default_config_dir());
TransformerConfig load_config_file(const std::filesystem::path& path);
EnergyConstants load_constants_file(const std::filesystem::path& path);

}  // namespace ternlm::cost
