#pragma once

#include <string>
#include <variant>
#include <vector>

#include "ternlm/config.hpp"
#include "ternlm/matrix.hpp"
#include "ternlm/model_file.hpp"
#include "ternlm/quantizer.hpp"
#include "ternlm/ternary_format.hpp"

namespace ternlm {

// Bias-free linear layer, y = x * W^T, with W either dense [out x in] or
// packed ternary.
class Linear {
 public:
  Linear() = default;
  explicit Linear(MatrixD w) : w_(std::move(w)) {}
  explicit Linear(TernaryTensor w) : w_(std::move(w)) {}

  bool is_ternary() const { return std::holds_alternative<TernaryTensor>(w_); }
  std::size_t out_features() const;
  std::size_t in_features() const;

  const MatrixD* dense() const { return std::get_if<MatrixD>(&w_); }
  const TernaryTensor* ternary() const { return std::get_if<TernaryTensor>(&w_); }

  // Ternary weights run bitlinear_forward (int8 activations); dense weights
  // run a full-precision product.
  MatrixD apply(const MatrixD& x, const quant::QuantizerParams& p) const;

 private:
  std::variant<MatrixD, TernaryTensor> w_;
};

struct LayerWeights {
  std::vector<double> attn_norm;
  Linear wq, wk, wv, wo;
  std::vector<double> ffn_norm;
  Linear w_gate, w_up, w_down;
};

struct TransformerWeights {
  MatrixD token_embedding;  // [vocab x hidden], always full precision
  std::vector<LayerWeights> layers;
  std::vector<double> final_norm;
  Linear output;  // [vocab x hidden]
};

struct Model {
  TransformerConfig config;
  TransformerWeights weights;
  quant::QuantizerParams qparams;
};

namespace tensor_names {
inline constexpr const char* kEmbedding = "tok_embeddings";
inline constexpr const char* kFinalNorm = "final_norm";
inline constexpr const char* kOutput = "output";
std::string layer(std::size_t i, const char* leaf);
// Leaves of the seven block linears, in file order.
inline constexpr const char* kBlockLinears[] = {"wq", "wk", "wv", "wo",
                                                "w_gate", "w_up", "w_down"};
bool is_block_linear(const std::string& name);
}  // namespace tensor_names

// Builds a model from a container. Every expected tensor must be present with
// the configured shape, ternary payloads are validated, and unknown tensors
// (bias vectors included) are rejected.
Model model_from_file(const ModelFile& file);
ModelFile model_to_file(const Model& model);

struct QuantizeSummary {
  struct Entry {
    std::string name;
    double gamma;
    std::uint64_t f32_bytes;
    std::uint64_t fp16_bytes;
    std::uint64_t packed_bytes;
  };
  std::vector<Entry> entries;
  std::uint64_t linear_fp16_bytes = 0;
  std::uint64_t linear_packed_bytes = 0;
};

// Converts every block linear of a full-precision container to
// TERNARY_PACKED; embedding, norm gains and (unless quantize_head) the output
// head are copied unchanged. Throws Errc::validation if any block linear is
// already quantized.
ModelFile quantize_model_file(const ModelFile& f32,
                              const quant::QuantizerParams& p = {},
                              bool quantize_head = false,
                              QuantizeSummary* summary = nullptr);

}  // namespace ternlm
