#include "ternlm/trainer.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ternlm/kernels.hpp"
#include "ternlm/layers.hpp"

namespace ternlm::train {

using kernels::dense_matmul;
using kernels::transpose;

LatentWeights LatentWeights::init(const TransformerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto mat = [&](std::size_t r, std::size_t c) {
    MatrixD m(r, c);
    for (double& v : m.flat()) v = normal(rng);
    return m;
  };
  LatentWeights w;
  w.config = cfg;
  w.embedding = mat(cfg.vocab, cfg.hidden);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    Layer l;
    l.attn_norm.assign(cfg.hidden, 1.0);
    l.wq = mat(cfg.hidden, cfg.hidden);
    l.wk = mat(cfg.hidden, cfg.hidden);
    l.wv = mat(cfg.hidden, cfg.hidden);
    l.wo = mat(cfg.hidden, cfg.hidden);
    l.ffn_norm.assign(cfg.hidden, 1.0);
    l.w_gate = mat(cfg.ffn_dim, cfg.hidden);
    l.w_up = mat(cfg.ffn_dim, cfg.hidden);
    l.w_down = mat(cfg.hidden, cfg.ffn_dim);
    w.layers.push_back(std::move(l));
  }
  w.final_norm.assign(cfg.hidden, 1.0);
  w.output = mat(cfg.vocab, cfg.hidden);
  return w;
}

LatentWeights LatentWeights::zeros_like(const LatentWeights& w) {
  LatentWeights z = w;
  for (auto& p : z.params()) std::fill(p.values.begin(), p.values.end(), 0.0);
  return z;
}

std::vector<LatentWeights::Param> LatentWeights::params() {
  namespace tn = tensor_names;
  std::vector<Param> out;
  out.push_back({tn::kEmbedding, embedding.flat()});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    out.push_back({tn::layer(i, "attn_norm"), l.attn_norm});
    out.push_back({tn::layer(i, "wq"), l.wq.flat()});
    out.push_back({tn::layer(i, "wk"), l.wk.flat()});
    out.push_back({tn::layer(i, "wv"), l.wv.flat()});
    out.push_back({tn::layer(i, "wo"), l.wo.flat()});
    out.push_back({tn::layer(i, "ffn_norm"), l.ffn_norm});
    out.push_back({tn::layer(i, "w_gate"), l.w_gate.flat()});
    out.push_back({tn::layer(i, "w_up"), l.w_up.flat()});
    out.push_back({tn::layer(i, "w_down"), l.w_down.flat()});
  }
  out.push_back({tn::kFinalNorm, final_norm});
  out.push_back({tn::kOutput, output.flat()});
  return out;
}

namespace {

// Weight as seen by the forward pass, plus its transpose for x * W^T.
struct Effective {
  MatrixD w, wt;
};

Effective effective(const MatrixD& latent, bool quantize, const quant::QuantizerParams& p) {
  Effective e{latent, {}};
  if (quantize) quant::fake_quantize_weights(e.w, p);
  e.wt = transpose(e.w);
  return e;
}

MatrixD input_for(const MatrixD& x, bool quantize, const quant::QuantizerParams& p) {
  MatrixD y = x;
  if (quantize) quant::fake_quantize_activations(y, p);
  return y;
}

void add_to(MatrixD& a, const MatrixD& b) {
  auto x = a.flat();
  auto y = b.flat();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

// dW += dY^T X
void weight_grad(MatrixD& dw, const MatrixD& dy, const MatrixD& x) {
  add_to(dw, dense_matmul(transpose(dy), x));
}

MatrixD rms_rows(const MatrixD& x, const std::vector<double>& g) {
  MatrixD out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto n = nn::rmsnorm(x.row(r), g);
    std::copy(n.begin(), n.end(), out.row(r).begin());
  }
  return out;
}

// Gradient of rmsnorm w.r.t. its input; accumulates the gain gradient.
MatrixD rms_rows_backward(const MatrixD& x, const std::vector<double>& g,
                          const MatrixD& dy, std::vector<double>& dg) {
  const std::size_t n = x.cols();
  MatrixD dx(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto dyr = dy.row(r);
    double ss = 0.0;
    for (double v : xr) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + nn::kNormEps);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dg[i] += dyr[i] * xr[i] * inv;
      dot += dyr[i] * g[i] * xr[i];
    }
    const double k = inv * inv * inv * dot / static_cast<double>(n);
    auto dxr = dx.row(r);
    for (std::size_t i = 0; i < n; ++i) dxr[i] = inv * g[i] * dyr[i] - k * xr[i];
  }
  return dx;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct LayerTape {
  MatrixD x_in, attn_in, q, k, v;  // q, k after RoPE
  std::vector<double> probs;       // [batch][head][query][key], causal part used
  MatrixD attn, o_in, x_mid, ffn_in, gate, up, down_in;
};

struct Dims {
  std::size_t batch, seq, hidden, heads, hd;
  std::size_t prob_index(std::size_t b, std::size_t h, std::size_t i, std::size_t s) const {
    return ((b * heads + h) * seq + i) * seq + s;
  }
};

}  // namespace

double loss_and_grad(const LatentWeights& w, std::span<const std::vector<Token>> windows,
                     const QuantMode& mode, LatentWeights* grad) {
  const auto& cfg = w.config;
  if (windows.empty()) throw Error(Errc::validation, "empty batch");
  const std::size_t seq = windows.front().size() - 1;
  if (seq == 0 || seq > cfg.max_seq)
    throw Error(Errc::validation, "window length must lie in [2, max_seq + 1]");
  for (const auto& win : windows) {
    if (win.size() != seq + 1) throw Error(Errc::validation, "ragged batch");
    for (Token t : win)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab)
        throw Error(Errc::validation, "token outside vocabulary");
  }
  const Dims dm{windows.size(), seq, cfg.hidden, cfg.heads, cfg.head_dim()};
  const std::size_t rows = dm.batch * seq;
  const auto& qp = mode.params;
  const bool qw = mode.weights, qa = mode.activations;

  struct LayerEff {
    Effective wq, wk, wv, wo, gate, up, down;
  };
  std::vector<LayerEff> eff;
  for (const auto& l : w.layers)
    eff.push_back({effective(l.wq, qw, qp), effective(l.wk, qw, qp),
                   effective(l.wv, qw, qp), effective(l.wo, qw, qp),
                   effective(l.w_gate, qw, qp), effective(l.w_up, qw, qp),
                   effective(l.w_down, qw, qp)});
  const Effective head = effective(w.output, mode.head && qw, qp);

  // Forward.
  MatrixD x(rows, dm.hidden);
  for (std::size_t b = 0; b < dm.batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      auto e = w.embedding.row(static_cast<std::size_t>(windows[b][t]));
      std::copy(e.begin(), e.end(), x.row(b * seq + t).begin());
    }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dm.hd));
  std::vector<LayerTape> tapes(cfg.layers);
  for (std::size_t li = 0; li < cfg.layers; ++li) {
    const auto& l = w.layers[li];
    const auto& e = eff[li];
    LayerTape& tp = tapes[li];
    tp.x_in = x;
    tp.attn_in = input_for(rms_rows(x, l.attn_norm), qa, qp);
    tp.q = dense_matmul(tp.attn_in, e.wq.wt);
    tp.k = dense_matmul(tp.attn_in, e.wk.wt);
    tp.v = dense_matmul(tp.attn_in, e.wv.wt);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < dm.heads; ++h) {
        nn::rope_rotate_inplace(tp.q.row(r).subspan(h * dm.hd, dm.hd), r % seq, cfg.rope_theta);
        nn::rope_rotate_inplace(tp.k.row(r).subspan(h * dm.hd, dm.hd), r % seq, cfg.rope_theta);
      }
    tp.probs.assign(dm.batch * dm.heads * seq * seq, 0.0);
    tp.attn = MatrixD(rows, dm.hidden);
    std::vector<double> scores;
    for (std::size_t b = 0; b < dm.batch; ++b)
      for (std::size_t h = 0; h < dm.heads; ++h)
        for (std::size_t i = 0; i < seq; ++i) {
          const double* qi = &tp.q(b * seq + i, h * dm.hd);
          scores.assign(i + 1, 0.0);
          for (std::size_t s = 0; s <= i; ++s) {
            const double* ks = &tp.k(b * seq + s, h * dm.hd);
            double dot = 0.0;
            for (std::size_t d = 0; d < dm.hd; ++d) dot += qi[d] * ks[d];
            scores[s] = dot * scale;
          }
          nn::softmax_inplace(scores);
          double* out = &tp.attn(b * seq + i, h * dm.hd);
          for (std::size_t s = 0; s <= i; ++s) {
            tp.probs[dm.prob_index(b, h, i, s)] = scores[s];
            const double* vs = &tp.v(b * seq + s, h * dm.hd);
            for (std::size_t d = 0; d < dm.hd; ++d) out[d] += scores[s] * vs[d];
          }
        }
    tp.o_in = input_for(tp.attn, qa, qp);
    x = tp.x_in;
    add_to(x, dense_matmul(tp.o_in, e.wo.wt));
    tp.x_mid = x;
    tp.ffn_in = input_for(rms_rows(x, l.ffn_norm), qa, qp);
    tp.gate = dense_matmul(tp.ffn_in, e.gate.wt);
    tp.up = dense_matmul(tp.ffn_in, e.up.wt);
    MatrixD hmid(rows, cfg.ffn_dim);
    for (std::size_t i = 0; i < hmid.size(); ++i)
      hmid.flat()[i] = nn::silu(tp.gate.flat()[i]) * tp.up.flat()[i];
    tp.down_in = input_for(hmid, qa, qp);
    add_to(x, dense_matmul(tp.down_in, e.down.wt));
  }
  const MatrixD x_final = x;
  const MatrixD head_in = input_for(rms_rows(x_final, w.final_norm), mode.head && qa, qp);
  MatrixD logits = dense_matmul(head_in, head.wt);

  double loss = 0.0;
  for (std::size_t b = 0; b < dm.batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      auto row = logits.row(b * seq + t);
      loss += nn::log_sum_exp(row) - row[static_cast<std::size_t>(windows[b][t + 1])];
    }
  loss /= static_cast<double>(rows);
  if (!grad) return loss;

  // Backward. dlogits = (softmax - onehot) / rows, computed in place.
  *grad = LatentWeights::zeros_like(w);
  LatentWeights& g = *grad;
  for (std::size_t b = 0; b < dm.batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      auto row = logits.row(b * seq + t);
      nn::softmax_inplace(row);
      row[static_cast<std::size_t>(windows[b][t + 1])] -= 1.0;
      for (double& v : row) v /= static_cast<double>(rows);
    }
  weight_grad(g.output, logits, head_in);
  MatrixD dx = rms_rows_backward(x_final, w.final_norm, dense_matmul(logits, head.w), g.final_norm);

  for (std::size_t li = cfg.layers; li-- > 0;) {
    const auto& l = w.layers[li];
    const auto& e = eff[li];
    const LayerTape& tp = tapes[li];
    auto& gl = g.layers[li];

    // Feed-forward.
    weight_grad(gl.w_down, dx, tp.down_in);
    const MatrixD dh = dense_matmul(dx, e.down.w);
    MatrixD dgate(rows, cfg.ffn_dim), dup(rows, cfg.ffn_dim);
    for (std::size_t i = 0; i < dh.size(); ++i) {
      const double z = tp.gate.flat()[i];
      const double sg = sigmoid(z);
      dup.flat()[i] = dh.flat()[i] * nn::silu(z);
      dgate.flat()[i] = dh.flat()[i] * tp.up.flat()[i] * sg * (1.0 + z * (1.0 - sg));
    }
    weight_grad(gl.w_gate, dgate, tp.ffn_in);
    weight_grad(gl.w_up, dup, tp.ffn_in);
    MatrixD dffn = dense_matmul(dgate, e.gate.w);
    add_to(dffn, dense_matmul(dup, e.up.w));
    add_to(dx, rms_rows_backward(tp.x_mid, l.ffn_norm, dffn, gl.ffn_norm));

    // Attention.
    weight_grad(gl.wo, dx, tp.o_in);
    const MatrixD dattn = dense_matmul(dx, e.wo.w);
    MatrixD dq(rows, dm.hidden), dk(rows, dm.hidden), dv(rows, dm.hidden);
    std::vector<double> dp;
    for (std::size_t b = 0; b < dm.batch; ++b)
      for (std::size_t h = 0; h < dm.heads; ++h)
        for (std::size_t i = 0; i < seq; ++i) {
          const double* doi = &dattn(b * seq + i, h * dm.hd);
          const double* qi = &tp.q(b * seq + i, h * dm.hd);
          double* dqi = &dq(b * seq + i, h * dm.hd);
          dp.assign(i + 1, 0.0);
          double weighted = 0.0;
          for (std::size_t s = 0; s <= i; ++s) {
            const double p = tp.probs[dm.prob_index(b, h, i, s)];
            const double* vs = &tp.v(b * seq + s, h * dm.hd);
            double* dvs = &dv(b * seq + s, h * dm.hd);
            double dot = 0.0;
            for (std::size_t d = 0; d < dm.hd; ++d) {
              dot += doi[d] * vs[d];
              dvs[d] += p * doi[d];
            }
            dp[s] = dot;
            weighted += p * dot;
          }
          for (std::size_t s = 0; s <= i; ++s) {
            const double ds = tp.probs[dm.prob_index(b, h, i, s)] * (dp[s] - weighted) * scale;
            const double* ks = &tp.k(b * seq + s, h * dm.hd);
            double* dks = &dk(b * seq + s, h * dm.hd);
            for (std::size_t d = 0; d < dm.hd; ++d) {
              dqi[d] += ds * ks[d];
              dks[d] += ds * qi[d];
            }
          }
        }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < dm.heads; ++h) {
        nn::rope_rotate_inplace(dq.row(r).subspan(h * dm.hd, dm.hd), r % seq, cfg.rope_theta, true);
        nn::rope_rotate_inplace(dk.row(r).subspan(h * dm.hd, dm.hd), r % seq, cfg.rope_theta, true);
      }
    weight_grad(gl.wq, dq, tp.attn_in);
    weight_grad(gl.wk, dk, tp.attn_in);
    weight_grad(gl.wv, dv, tp.attn_in);
    MatrixD dain = dense_matmul(dq, e.wq.w);
    add_to(dain, dense_matmul(dk, e.wk.w));
    add_to(dain, dense_matmul(dv, e.wv.w));
    add_to(dx, rms_rows_backward(tp.x_in, l.attn_norm, dain, gl.attn_norm));
  }

  for (std::size_t b = 0; b < dm.batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) {
      auto de = g.embedding.row(static_cast<std::size_t>(windows[b][t]));
      auto src = dx.row(b * seq + t);
      for (std::size_t i = 0; i < de.size(); ++i) de[i] += src[i];
    }
  return loss;
}

TrainResult train_toy(const TransformerConfig& cfg, std::string_view corpus,
                      const TrainOptions& options) {
  cfg.validate();
  options.quant.params.validate();
  if (cfg.vocab < 256)
    throw Error(Errc::validation, "byte-level training needs vocab >= 256");
  if (corpus.size() < cfg.max_seq + 1)
    throw Error(Errc::validation, "corpus of " + std::to_string(corpus.size()) +
                                      " bytes is shorter than max_seq + 1 = " +
                                      std::to_string(cfg.max_seq + 1));
  if (options.batch == 0) throw Error(Errc::validation, "batch must be positive");

  TrainResult result{LatentWeights::init(cfg, options.seed), {}};
  LatentWeights& w = result.latent;
  const std::vector<Token> tokens = bytes_to_tokens(corpus);

  // Data order uses its own stream so it does not shift with model size.
  std::mt19937_64 data_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> start_dist(0, tokens.size() - (cfg.max_seq + 1));

  auto params = w.params();
  std::vector<std::vector<double>> m1, m2;
  for (const auto& p : params) {
    m1.emplace_back(p.values.size(), 0.0);
    m2.emplace_back(p.values.size(), 0.0);
  }

  LatentWeights grad;
  std::vector<std::vector<Token>> windows(options.batch);
  double last_finite = std::nan("");
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (auto& win : windows) {
      const std::size_t s = start_dist(data_rng);
      win.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s),
                 tokens.begin() + static_cast<std::ptrdiff_t>(s + cfg.max_seq + 1));
    }
    const double loss = loss_and_grad(w, windows, options.quant, &grad);
    if (!std::isfinite(loss))
      throw Error(Errc::validation, "non-finite loss at step " + std::to_string(step) +
                                        " (last finite loss " + std::to_string(last_finite) +
                                        ", learning rate " + std::to_string(options.learning_rate) + ")");
    last_finite = loss;
    result.loss_trace.push_back(loss);
    if (options.on_step) options.on_step(step, loss);

    const double warm = options.warmup ? std::min(1.0, static_cast<double>(step + 1) / options.warmup) : 1.0;
    const double progress = static_cast<double>(step) / static_cast<double>(options.steps);
    const double cosine = options.final_lr_fraction +
                          (1.0 - options.final_lr_fraction) * 0.5 *
                              (1.0 + std::cos(std::numbers::pi * progress));
    const double lr = options.learning_rate * warm * cosine;
    const double bc1 = 1.0 - std::pow(options.adam_beta1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(options.adam_beta2, static_cast<double>(step + 1));

    auto gparams = grad.params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto v = params[pi].values;
      auto gv = gparams[pi].values;
      auto& a = m1[pi];
      auto& b = m2[pi];
      for (std::size_t i = 0; i < v.size(); ++i) {
        a[i] = options.adam_beta1 * a[i] + (1.0 - options.adam_beta1) * gv[i];
        b[i] = options.adam_beta2 * b[i] + (1.0 - options.adam_beta2) * gv[i] * gv[i];
        v[i] -= lr * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + options.adam_eps);
      }
    }
  }
  return result;
}

ModelFile export_f32(const LatentWeights& w) {
  Model m;
  m.config = w.config;
  auto& tw = m.weights;
  tw.token_embedding = w.embedding;
  for (const auto& l : w.layers)
    tw.layers.push_back({l.attn_norm, Linear(l.wq), Linear(l.wk), Linear(l.wv),
                         Linear(l.wo), l.ffn_norm, Linear(l.w_gate), Linear(l.w_up),
                         Linear(l.w_down)});
  tw.final_norm = w.final_norm;
  tw.output = Linear(w.output);
  return model_to_file(m);
}

ModelFile export_quantized(const LatentWeights& w, const QuantMode& mode) {
  return quantize_model_file(export_f32(w), mode.params, mode.head);
}

}  // namespace ternlm::train
