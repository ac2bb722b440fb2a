#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ternlm/model.hpp"

namespace ternlm {

using Token = int;

// Keys (post-RoPE) and values of one layer for positions [0, length).
struct LayerCache {
  MatrixD keys, values;  // [max_seq x hidden]
  std::size_t length = 0;
};

struct KvCache {
  explicit KvCache(const TransformerConfig& cfg);
  std::vector<LayerCache> layers;
};

// down(silu(gate(x)) * up(x)), row-wise over x.
MatrixD swiglu_ffn(const MatrixD& x, const Linear& gate, const Linear& up,
                   const Linear& down, const quant::QuantizerParams& p = {});

// Collects the attention probability rows (one per query and head).
struct AttentionProbe {
  std::vector<std::vector<double>> rows;
};

// Pre-norm causal self-attention with residual, for rows occupying positions
// [cache.length, cache.length + rows). Appends the rows' keys and values to
// the cache. Throws Errc::validation when the cache would exceed max_seq.
MatrixD attention_block(const MatrixD& hidden_states, const LayerWeights& layer,
                        const TransformerConfig& cfg, LayerCache& cache,
                        const quant::QuantizerParams& p = {},
                        AttentionProbe* probe = nullptr);

// Logits [seq x vocab] for a fresh sequence.
MatrixD forward(const Model& model, std::span<const Token> ids);

// Incremental decoding over a per-session KV cache.
class DecodeSession {
 public:
  explicit DecodeSession(const Model& model);
  // Logits for the fed tokens, which occupy the next positions.
  MatrixD feed(std::span<const Token> ids);
  std::size_t position() const { return cache_.layers.front().length; }

 private:
  const Model& model_;
  KvCache cache_;
};

// Greedy continuation; stops early at max_seq. Returns only new tokens.
std::vector<Token> greedy_generate(const Model& model,
                                   std::span<const Token> prompt,
                                   std::size_t max_new);

// exp(mean NLL of next-token predictions) under teacher forcing. Sequences
// longer than max_seq are scored in consecutive non-overlapping windows of
// max_seq tokens; a trailing window shorter than 2 tokens is dropped.
// Throws Errc::validation when fewer than 2 tokens are given.
double perplexity(const Model& model, std::span<const Token> ids);

// Perplexity of the maximum-likelihood unigram model of `ids` over the same
// predicted positions perplexity() scores (every token after the first).
double unigram_perplexity(std::span<const Token> ids);

std::vector<Token> bytes_to_tokens(std::string_view bytes);
std::string tokens_to_bytes(std::span<const Token> ids);

}  // namespace ternlm
