#include "ternlm/transformer.hpp"

#include <cmath>
#include <map>

#include "ternlm/layers.hpp"

namespace ternlm {

KvCache::KvCache(const TransformerConfig& cfg) {
  layers.resize(cfg.layers);
  for (auto& l : layers) {
    l.keys = MatrixD(cfg.max_seq, cfg.hidden);
    l.values = MatrixD(cfg.max_seq, cfg.hidden);
  }
}

namespace {

MatrixD rmsnorm_rows(const MatrixD& x, const std::vector<double>& gain) {
  MatrixD out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto n = nn::rmsnorm(x.row(r), gain);
    std::copy(n.begin(), n.end(), out.row(r).begin());
  }
  return out;
}

void add_inplace(MatrixD& a, const MatrixD& b) {
  auto x = a.flat();
  auto y = b.flat();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

void check_tokens(std::span<const Token> ids, const TransformerConfig& cfg) {
  for (Token t : ids)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab)
      throw Error(Errc::validation, "token id " + std::to_string(t) +
                                        " outside vocabulary of " +
                                        std::to_string(cfg.vocab));
}

MatrixD run_layers(const Model& model, std::span<const Token> ids, KvCache& cache) {
  const auto& cfg = model.config;
  check_tokens(ids, cfg);
  MatrixD h(ids.size(), cfg.hidden);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto e = model.weights.token_embedding.row(static_cast<std::size_t>(ids[i]));
    std::copy(e.begin(), e.end(), h.row(i).begin());
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& lw = model.weights.layers[l];
    h = attention_block(h, lw, cfg, cache.layers[l], model.qparams);
    const MatrixD normed = rmsnorm_rows(h, lw.ffn_norm);
    add_inplace(h, swiglu_ffn(normed, lw.w_gate, lw.w_up, lw.w_down, model.qparams));
  }
  const MatrixD normed = rmsnorm_rows(h, model.weights.final_norm);
  return model.weights.output.apply(normed, model.qparams);
}

}  // namespace

MatrixD swiglu_ffn(const MatrixD& x, const Linear& gate, const Linear& up,
                   const Linear& down, const quant::QuantizerParams& p) {
  if (gate.in_features() != x.cols() || up.in_features() != x.cols() ||
      gate.out_features() != up.out_features() ||
      down.in_features() != gate.out_features())
    throw Error(Errc::dimension, "swiglu_ffn: inconsistent projection shapes");
  MatrixD g = gate.apply(x, p);
  const MatrixD u = up.apply(x, p);
  auto gv = g.flat();
  auto uv = u.flat();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = nn::silu(gv[i]) * uv[i];
  return down.apply(g, p);
}

MatrixD attention_block(const MatrixD& hidden_states, const LayerWeights& layer,
                        const TransformerConfig& cfg, LayerCache& cache,
                        const quant::QuantizerParams& p, AttentionProbe* probe) {
  const std::size_t seq = hidden_states.rows();
  const std::size_t start = cache.length;
  if (hidden_states.cols() != cfg.hidden)
    throw Error(Errc::dimension, "attention_block: hidden width mismatch");
  if (cache.keys.rows() != cfg.max_seq || cache.keys.cols() != cfg.hidden)
    throw Error(Errc::validation, "attention_block: cache shape does not match config");
  if (start + seq > cfg.max_seq)
    throw Error(Errc::validation, "attention_block: position " +
                                      std::to_string(start + seq) +
                                      " exceeds max_seq " + std::to_string(cfg.max_seq));

  const MatrixD a = rmsnorm_rows(hidden_states, layer.attn_norm);
  MatrixD q = layer.wq.apply(a, p);
  MatrixD k = layer.wk.apply(a, p);
  const MatrixD v = layer.wv.apply(a, p);

  const std::size_t hd = cfg.head_dim();
  for (std::size_t i = 0; i < seq; ++i) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      nn::rope_rotate_inplace(q.row(i).subspan(h * hd, hd), start + i, cfg.rope_theta);
      nn::rope_rotate_inplace(k.row(i).subspan(h * hd, hd), start + i, cfg.rope_theta);
    }
    std::copy(k.row(i).begin(), k.row(i).end(), cache.keys.row(start + i).begin());
    std::copy(v.row(i).begin(), v.row(i).end(), cache.values.row(start + i).begin());
  }
  cache.length = start + seq;

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  MatrixD attn(seq, cfg.hidden);
  std::vector<double> scores;
  for (std::size_t i = 0; i < seq; ++i) {
    const std::size_t pos = start + i;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const double* qi = &q(i, h * hd);
      scores.assign(pos + 1, 0.0);
      for (std::size_t s = 0; s <= pos; ++s) {
        const double* ks = &cache.keys(s, h * hd);
        double dot = 0.0;
        for (std::size_t d = 0; d < hd; ++d) dot += qi[d] * ks[d];
        scores[s] = dot * scale;
      }
      nn::softmax_inplace(scores);
      if (probe) probe->rows.push_back(scores);
      double* out = &attn(i, h * hd);
      for (std::size_t s = 0; s <= pos; ++s) {
        const double* vs = &cache.values(s, h * hd);
        for (std::size_t d = 0; d < hd; ++d) out[d] += scores[s] * vs[d];
      }
    }
  }
  MatrixD result = hidden_states;
  add_inplace(result, layer.wo.apply(attn, p));
  return result;
}

MatrixD forward(const Model& model, std::span<const Token> ids) {
  KvCache cache(model.config);
  return run_layers(model, ids, cache);
}

DecodeSession::DecodeSession(const Model& model)
    : model_(model), cache_(model.config) {}

MatrixD DecodeSession::feed(std::span<const Token> ids) {
  return run_layers(model_, ids, cache_);
}

std::vector<Token> greedy_generate(const Model& model,
                                   std::span<const Token> prompt,
                                   std::size_t max_new) {
  if (prompt.empty()) throw Error(Errc::validation, "empty prompt");
  if (prompt.size() > model.config.max_seq)
    throw Error(Errc::validation, "prompt longer than max_seq");
  DecodeSession session(model);
  MatrixD logits = session.feed(prompt);
  std::vector<Token> out;
  while (out.size() < max_new) {
    auto last = logits.row(logits.rows() - 1);
    // Lowest index wins ties.
    const Token next = static_cast<Token>(
        std::max_element(last.begin(), last.end()) - last.begin());
    out.push_back(next);
    if (session.position() >= model.config.max_seq) break;
    const Token feed[1] = {next};
    logits = session.feed(feed);
  }
  return out;
}

double perplexity(const Model& model, std::span<const Token> ids) {
  if (ids.size() < 2)
    throw Error(Errc::validation, "perplexity needs at least 2 tokens, got " +
                                      std::to_string(ids.size()));
  check_tokens(ids, model.config);
  const std::size_t window = model.config.max_seq;
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < ids.size(); begin += window) {
    const auto chunk = ids.subspan(begin, std::min(window, ids.size() - begin));
    if (chunk.size() < 2) break;
    const MatrixD logits = forward(model, chunk);
    for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
      auto row = logits.row(t);
      nll += nn::log_sum_exp(row) - row[static_cast<std::size_t>(chunk[t + 1])];
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

double unigram_perplexity(std::span<const Token> ids) {
  if (ids.size() < 2)
    throw Error(Errc::validation, "unigram perplexity needs at least 2 tokens");
  std::map<Token, std::size_t> counts;
  for (std::size_t i = 1; i < ids.size(); ++i) ++counts[ids[i]];
  const double n = static_cast<double>(ids.size() - 1);
  double nll = 0.0;
  for (const auto& [tok, c] : counts) nll -= c * std::log(c / n);
  return std::exp(nll / n);
}

std::vector<Token> bytes_to_tokens(std::string_view bytes) {
  std::vector<Token> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    out[i] = static_cast<unsigned char>(bytes[i]);
  return out;
}

std::string tokens_to_bytes(std::span<const Token> ids) {
  std::string out(ids.size(), '\0');
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = static_cast<char>(ids[i]);
  return out;
}

}  // namespace ternlm
