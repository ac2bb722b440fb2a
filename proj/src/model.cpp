#include "ternlm/model.hpp"

#include <cstring>
#include <set>

#include "ternlm/kernels.hpp"

namespace ternlm {

std::size_t Linear::out_features() const {
  if (auto d = dense()) return d->rows();
  return ternary()->rows();
}

std::size_t Linear::in_features() const {
  if (auto d = dense()) return d->cols();
  return ternary()->cols();
}

MatrixD Linear::apply(const MatrixD& x, const quant::QuantizerParams& p) const {
  if (auto t = ternary()) return kernels::bitlinear_forward(*t, x, p);
  return kernels::linear_dense(x, *dense());
}

namespace tensor_names {

std::string layer(std::size_t i, const char* leaf) {
  return "layers." + std::to_string(i) + "." + leaf;
}

bool is_block_linear(const std::string& name) {
  if (name.rfind("layers.", 0) != 0) return false;
  const auto dot = name.rfind('.');
  const std::string leaf = name.substr(dot + 1);
  for (const char* l : kBlockLinears)
    if (leaf == l) return true;
  return false;
}

}  // namespace tensor_names

namespace {

class TensorSource {
 public:
  explicit TensorSource(const ModelFile& f) : file_(f) {}

  const TensorRecord& take(const std::string& name) {
    const TensorRecord* r = file_.find(name);
    if (!r) throw Error(Errc::validation, "model file lacks tensor '" + name + "'");
    used_.insert(name);
    return *r;
  }

  std::vector<double> vector(const std::string& name, std::size_t n) {
    const auto& r = take(name);
    if (r.dims != std::vector<std::uint64_t>{n})
      throw Error(Errc::validation, "tensor '" + name + "' has wrong shape");
    return f32_values(r);
  }

  MatrixD dense(const std::string& name, std::size_t rows, std::size_t cols) {
    const auto& r = take(name);
    check_dims(r, rows, cols);
    return MatrixD(rows, cols, f32_values(r));
  }

  Linear linear(const std::string& name, std::size_t rows, std::size_t cols) {
    const auto& r = take(name);
    check_dims(r, rows, cols);
    if (r.dtype == DType::TERNARY_PACKED) {
      TernaryTensor t(rows, cols, *r.scale, r.payload);
      t.validate();
      return Linear(std::move(t));
    }
    return Linear(MatrixD(rows, cols, f32_values(r)));
  }

  void reject_unused() const {
    for (const auto& t : file_.tensors)
      if (!used_.count(t.name))
        throw Error(Errc::validation, "unexpected tensor '" + t.name + "'");
  }

 private:
  static void check_dims(const TensorRecord& r, std::size_t rows, std::size_t cols) {
    if (r.dims != std::vector<std::uint64_t>{rows, cols})
      throw Error(Errc::validation, "tensor '" + r.name + "' has wrong shape");
  }

  const ModelFile& file_;
  std::set<std::string> used_;
};

TensorRecord record_for(const std::string& name, const Linear& l) {
  if (auto t = l.ternary()) {
    return TensorRecord{name, DType::TERNARY_PACKED,
                        {t->rows(), t->cols()}, t->gamma(),
                        {t->bytes().begin(), t->bytes().end()}};
  }
  const MatrixD& d = *l.dense();
  return make_f32_record(name, {d.rows(), d.cols()}, d.storage());
}

}  // namespace

Model model_from_file(const ModelFile& file) {
  namespace tn = tensor_names;
  const TransformerConfig& c = file.config;
  c.validate();
  TensorSource src(file);
  Model m;
  m.config = c;
  auto& w = m.weights;
  w.token_embedding = src.dense(tn::kEmbedding, c.vocab, c.hidden);
  for (std::size_t i = 0; i < c.layers; ++i) {
    LayerWeights l;
    l.attn_norm = src.vector(tn::layer(i, "attn_norm"), c.hidden);
    l.wq = src.linear(tn::layer(i, "wq"), c.hidden, c.hidden);
    l.wk = src.linear(tn::layer(i, "wk"), c.hidden, c.hidden);
    l.wv = src.linear(tn::layer(i, "wv"), c.hidden, c.hidden);
    l.wo = src.linear(tn::layer(i, "wo"), c.hidden, c.hidden);
    l.ffn_norm = src.vector(tn::layer(i, "ffn_norm"), c.hidden);
    l.w_gate = src.linear(tn::layer(i, "w_gate"), c.ffn_dim, c.hidden);
    l.w_up = src.linear(tn::layer(i, "w_up"), c.ffn_dim, c.hidden);
    l.w_down = src.linear(tn::layer(i, "w_down"), c.hidden, c.ffn_dim);
    w.layers.push_back(std::move(l));
  }
  w.final_norm = src.vector(tn::kFinalNorm, c.hidden);
  w.output = src.linear(tn::kOutput, c.vocab, c.hidden);
  src.reject_unused();
  return m;
}

ModelFile model_to_file(const Model& model) {
  namespace tn = tensor_names;
  ModelFile f;
  f.config = model.config;
  const auto& w = model.weights;
  const auto& emb = w.token_embedding;
  f.tensors.push_back(make_f32_record(tn::kEmbedding, {emb.rows(), emb.cols()}, emb.storage()));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    f.tensors.push_back(make_f32_record(tn::layer(i, "attn_norm"), {l.attn_norm.size()}, l.attn_norm));
    f.tensors.push_back(record_for(tn::layer(i, "wq"), l.wq));
    f.tensors.push_back(record_for(tn::layer(i, "wk"), l.wk));
    f.tensors.push_back(record_for(tn::layer(i, "wv"), l.wv));
    f.tensors.push_back(record_for(tn::layer(i, "wo"), l.wo));
    f.tensors.push_back(make_f32_record(tn::layer(i, "ffn_norm"), {l.ffn_norm.size()}, l.ffn_norm));
    f.tensors.push_back(record_for(tn::layer(i, "w_gate"), l.w_gate));
    f.tensors.push_back(record_for(tn::layer(i, "w_up"), l.w_up));
    f.tensors.push_back(record_for(tn::layer(i, "w_down"), l.w_down));
  }
  f.tensors.push_back(make_f32_record(tn::kFinalNorm, {w.final_norm.size()}, w.final_norm));
  f.tensors.push_back(record_for(tn::kOutput, w.output));
  return f;
}

ModelFile quantize_model_file(const ModelFile& f32, const quant::QuantizerParams& p,
                              bool quantize_head, QuantizeSummary* summary) {
  // Round-trip through the model builder so shapes and names are checked.
  model_from_file(f32);
  ModelFile out;
  out.config = f32.config;
  QuantizeSummary local;
  for (const auto& rec : f32.tensors) {
    const bool target = tensor_names::is_block_linear(rec.name) ||
                        (quantize_head && rec.name == tensor_names::kOutput);
    if (!target) {
      out.tensors.push_back(rec);
      continue;
    }
    if (rec.dtype != DType::F32)
      throw Error(Errc::validation, "tensor '" + rec.name + "' is already " +
                                        to_string(rec.dtype) + "; input must be a full-precision model");
    const MatrixD w(rec.dims[0], rec.dims[1], f32_values(rec));
    const auto q = quant::quantize_weights(w, p);
    const TernaryTensor t = pack(q.codes, q.scale.gamma);
    out.tensors.push_back(record_for(rec.name, Linear(t)));
    const std::uint64_t n = rec.dims[0] * rec.dims[1];
    local.entries.push_back({rec.name, q.scale.gamma, n * 4, n * 2, t.bytes().size()});
    if (tensor_names::is_block_linear(rec.name)) {
      local.linear_fp16_bytes += n * 2;
      local.linear_packed_bytes += t.bytes().size();
    }
  }
  if (summary) *summary = std::move(local);
  return out;
}

}  // namespace ternlm
