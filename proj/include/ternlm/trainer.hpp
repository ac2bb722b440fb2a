#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ternlm/model.hpp"
#include "ternlm/transformer.hpp"

namespace ternlm::train {

// Full-precision latent parameters of a transformer under training.
struct LatentWeights {
  struct Layer {
    std::vector<double> attn_norm;
    MatrixD wq, wk, wv, wo;
    std::vector<double> ffn_norm;
    MatrixD w_gate, w_up, w_down;
  };

  TransformerConfig config;
  MatrixD embedding;
  std::vector<Layer> layers;
  std::vector<double> final_norm;
  MatrixD output;

  // Matrices ~ N(0, 0.02), norm gains = 1.
  static LatentWeights init(const TransformerConfig& cfg, std::uint64_t seed);
  // Same shapes, every entry zero.
  static LatentWeights zeros_like(const LatentWeights& w);

  struct Param {
    std::string name;
    std::span<double> values;
  };
  // Flat views in model-file order.
  std::vector<Param> params();
};

struct QuantMode {
  bool weights = true;      // absmean ternary fake-quantization of block linears
  bool activations = true;  // per-token int8 fake-quantization of their inputs
  bool head = false;        // apply both to the output head as well
  quant::QuantizerParams params;

  static QuantMode disabled() { return {false, false, false, {}}; }
};

// Mean next-token cross-entropy over every window (each window holds
// inputs followed by one extra target token). When grad is non-null it is
// overwritten with dLoss/dLatent; quantizers pass gradients straight through
// with gamma and beta held constant.
double loss_and_grad(const LatentWeights& w, std::span<const std::vector<Token>> windows,
                     const QuantMode& mode, LatentWeights* grad);

struct TrainOptions {
  std::size_t steps = 2000;
  double learning_rate = 3e-3;
  std::uint64_t seed = 42;
  std::size_t batch = 8;
  std::size_t warmup = 100;
  double final_lr_fraction = 0.1;  // cosine decay floor
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  QuantMode quant;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  LatentWeights latent;
  std::vector<double> loss_trace;  // one entry per step
};

// Adam without weight decay over fake-quantized forwards. Windows of
// max_seq + 1 bytes are drawn uniformly from the corpus with a generator
// seeded by options.seed.
TrainResult train_toy(const TransformerConfig& cfg, std::string_view corpus,
                      const TrainOptions& options);

// Latent weights as a full-precision container (values rounded to F32).
ModelFile export_f32(const LatentWeights& w);
// export_f32 followed by quantize_model_file.
ModelFile export_quantized(const LatentWeights& w, const QuantMode& mode = {});

}  // namespace ternlm::train
