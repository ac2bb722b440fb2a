#include "ternlm/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ternlm/error.hpp"
#include "ternlm/ternary_format.hpp"

#ifndef TERNLM_CONFIG_DIR
#define TERNLM_CONFIG_DIR "configs"
#endif

namespace ternlm::cost {

const char* to_string(Mode m) { return m == Mode::fp16 ? "fp16" : "ternary"; }

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::first_better: return "first_better";
    case Verdict::second_better: return "second_better";
    case Verdict::tie: return "tie";
  }
  return "?";
}

void EnergyConstants::validate() const {
  for (double v : {fp16_add, fp16_mul, int8_add})
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error(Errc::validation, "energy constants must be strictly positive");
}

double EnergyConstants::per_mac(Mode m) const {
  return m == Mode::fp16 ? fp16_add + fp16_mul : int8_add;
}

EnergyConstants constants_from_json(const nlohmann::json& j) {
  EnergyConstants c;
  try {
    c.fp16_add = j.value("fp16_add", c.fp16_add);
    c.fp16_mul = j.value("fp16_mul", c.fp16_mul);
    c.int8_add = j.value("int8_add", c.int8_add);
    c.process_node = j.value("process_node", c.process_node);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, std::string("bad energy constants: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const EnergyConstants& c) {
  return {{"process_node", c.process_node},
          {"fp16_add", c.fp16_add},
          {"fp16_mul", c.fp16_mul},
          {"int8_add", c.int8_add}};
}

double matmul_energy(std::uint64_t m, std::uint64_t k, std::uint64_t n, Mode mode,
                     const EnergyConstants& c) {
  return static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n) *
         c.per_mac(mode);
}

ParamCounts param_counts(const TransformerConfig& cfg) {
  const std::uint64_t h = cfg.hidden, f = cfg.ffn_dim, v = cfg.vocab, l = cfg.layers;
  ParamCounts p;
  p.block_linear = l * (4 * h * h + 3 * h * f);
  p.embedding = v * h;
  p.head = v * h;
  p.norms = (2 * l + 1) * h;
  return p;
}

double model_energy_per_token(const TransformerConfig& cfg, Mode mode,
                              const EnergyConstants& c) {
  const std::uint64_t h = cfg.hidden, f = cfg.ffn_dim;
  double e = 0.0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    e += 4 * matmul_energy(1, h, h, mode, c);
    e += 3 * matmul_energy(1, h, f, mode, c);
  }
  e += matmul_energy(1, h, cfg.vocab, Mode::fp16, c);
  return e;
}

double sequence_energy(const TransformerConfig& cfg, std::uint64_t tokens, Mode mode,
                       const EnergyConstants& c, const EnergyOptions& opt) {
  double e = static_cast<double>(tokens) * model_energy_per_token(cfg, mode, c);
  if (opt.include_attention_scores) {
    // Position p attends to p + 1 keys: hidden * (p + 1) MACs each for QK^T
    // and PV, per layer.
    const double macs = static_cast<double>(cfg.hidden) * cfg.layers *
                        static_cast<double>(tokens) * static_cast<double>(tokens + 1);
    e += macs * c.per_mac(Mode::fp16);
  }
  return e;
}

MemoryBreakdown model_memory_bytes(const TransformerConfig& cfg, Mode mode) {
  const ParamCounts p = param_counts(cfg);
  MemoryBreakdown m;
  m.full_precision_bytes = 2 * (p.embedding + p.head + p.norms);
  if (mode == Mode::fp16) {
    m.quantized_eligible_bytes = 2 * p.block_linear;
  } else {
    const std::uint64_t h = cfg.hidden, f = cfg.ffn_dim;
    const std::uint64_t per_layer = 4 * h * packed_row_bytes(h) +
                                    2 * f * packed_row_bytes(h) +
                                    h * packed_row_bytes(f);
    m.quantized_eligible_bytes = cfg.layers * per_layer;
  }
  return m;
}

CostReport cost_report(const std::string& label, const TransformerConfig& cfg,
                       std::uint64_t tokens, const EnergyConstants& c,
                       const EnergyOptions& opt) {
  c.validate();
  CostReport r;
  r.model_label = label;
  r.tokens = tokens;
  r.parameters = param_counts(cfg).total();
  const auto mf = model_memory_bytes(cfg, Mode::fp16);
  const auto mt = model_memory_bytes(cfg, Mode::ternary);
  r.weight_bytes_fp16 = mf.total();
  r.weight_bytes_ternary = mt.total();
  r.block_linear_bytes_fp16 = mf.quantized_eligible_bytes;
  r.block_linear_bytes_ternary = mt.quantized_eligible_bytes;
  r.arithmetic_energy_fp16_pJ = sequence_energy(cfg, tokens, Mode::fp16, c, opt);
  r.arithmetic_energy_ternary_pJ = sequence_energy(cfg, tokens, Mode::ternary, c, opt);
  r.memory_ratio = static_cast<double>(r.weight_bytes_fp16) / r.weight_bytes_ternary;
  r.energy_ratio = r.arithmetic_energy_fp16_pJ / r.arithmetic_energy_ternary_pJ;
  return r;
}

nlohmann::json to_json(const CostReport& r) {
  return {{"model_label", r.model_label},
          {"tokens", r.tokens},
          {"parameters", r.parameters},
          {"weight_bytes_fp16", r.weight_bytes_fp16},
          {"weight_bytes_ternary", r.weight_bytes_ternary},
          {"block_linear_bytes_fp16", r.block_linear_bytes_fp16},
          {"block_linear_bytes_ternary", r.block_linear_bytes_ternary},
          {"memory_ratio", r.memory_ratio},
          {"arithmetic_energy_fp16_pJ", r.arithmetic_energy_fp16_pJ},
          {"arithmetic_energy_ternary_pJ", r.arithmetic_energy_ternary_pJ},
          {"energy_ratio", r.energy_ratio},
          {"latency", kLatencyNote}};
}

std::string format_table(const std::vector<CostReport>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "model" << std::right << std::setw(8) << "tokens"
     << std::setw(14) << "params" << std::setw(14) << "fp16 GB" << std::setw(14)
     << "ternary GB" << std::setw(9) << "mem x" << std::setw(16) << "fp16 pJ"
     << std::setw(16) << "ternary pJ" << std::setw(9) << "energy x"
     << "  latency\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(8) << r.model_label << std::right << std::setw(8)
       << r.tokens << std::setw(14) << r.parameters << std::setprecision(3)
       << std::setw(14) << r.weight_bytes_fp16 / 1e9 << std::setw(14)
       << r.weight_bytes_ternary / 1e9 << std::setprecision(2) << std::setw(9)
       << r.memory_ratio << std::setprecision(4) << std::setw(16) << std::scientific
       << r.arithmetic_energy_fp16_pJ << std::setw(16) << r.arithmetic_energy_ternary_pJ
       << std::fixed << std::setprecision(2) << std::setw(9) << r.energy_ratio << "  "
       << kLatencyNote << "\n";
  }
  return os.str();
}

namespace {

template <typename T>
Verdict compare_lower_better(T a, T b) {
  if (a < b) return Verdict::first_better;
  if (b < a) return Verdict::second_better;
  return Verdict::tie;
}

}  // namespace

ParetoResult pareto_compare(const TransformerConfig& a, Mode mode_a,
                            const TransformerConfig& b, Mode mode_b,
                            const EnergyConstants& c) {
  ParetoResult r;
  r.energy_first_pJ = model_energy_per_token(a, mode_a, c);
  r.energy_second_pJ = model_energy_per_token(b, mode_b, c);
  r.memory_first = model_memory_bytes(a, mode_a).total();
  r.memory_second = model_memory_bytes(b, mode_b).total();
  r.energy = compare_lower_better(r.energy_first_pJ, r.energy_second_pJ);
  r.memory = compare_lower_better(r.memory_first, r.memory_second);
  const bool no_worse = r.energy != Verdict::second_better && r.memory != Verdict::second_better;
  const bool some_better = r.energy == Verdict::first_better || r.memory == Verdict::first_better;
  r.first_dominates = no_worse && some_better;
  return r;
}

ParetoResult pareto_compare(const TransformerConfig& ternary_cfg,
                            const TransformerConfig& fp16_cfg, const EnergyConstants& c) {
  return pareto_compare(ternary_cfg, Mode::ternary, fp16_cfg, Mode::fp16, c);
}

nlohmann::json to_json(const ParetoResult& r) {
  return {{"energy_per_token_pJ", {r.energy_first_pJ, r.energy_second_pJ}},
          {"weight_bytes", {r.memory_first, r.memory_second}},
          {"energy", to_string(r.energy)},
          {"memory", to_string(r.memory)},
          {"first_dominates", r.first_dominates},
          {"latency", kLatencyNote}};
}

const std::vector<std::string>& size_labels() {
  static const std::vector<std::string> labels = {"700M", "1.3B", "3B", "3.9B",
                                                  "7B",   "13B",  "30B", "70B"};
  return labels;
}

std::filesystem::path default_config_dir() {
  if (const char* env = std::getenv("TERNLM_CONFIG_DIR")) return env;
  return TERNLM_CONFIG_DIR;
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, path.string() + ": " + e.what());
  }
}

}  // namespace

TransformerConfig load_size_config(const std::string& label,
                                   const std::filesystem::path& dir) {
  const auto& labels = size_labels();
  if (std::find(labels.begin(), labels.end(), label) == labels.end())
    throw Error(Errc::validation, "unknown size label '" + label + "'");
  return load_config_file(dir / (label + ".json"));
}

TransformerConfig load_config_file(const std::filesystem::path& path) {
  return config_from_json(read_json(path));
}

EnergyConstants load_constants_file(const std::filesystem::path& path) {
  return constants_from_json(read_json(path));
}

}  // namespace ternlm::cost
