// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "../train_oracle.hpp"
#include "ternlm/cli.hpp"
#include "ternlm/costmodel.hpp"
#include "ternlm/kernels.hpp"
#include "ternlm/layers.hpp"
#include "ternlm/quantizer.hpp"
#include "ternlm/ternary_format.hpp"
#include "ternlm/trainer.hpp"
#include "ternlm/transformer.hpp"

namespace fs = std::filesystem;
using namespace ternlm;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1
Outcome quantizer_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_real_distribution<double> val(-4.0, 4.0);
  double worst_gamma = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    MatrixD w(dim(rng), dim(rng));
    for (double& v : w.flat()) v = val(rng);
    const auto got = quant::quantize_weights(w);
    const auto want = oracle::quantize_weights({w.flat().begin(), w.flat().end()}, 1e-6);
    for (std::size_t i = 0; i < w.size(); ++i)
      if (got.codes.flat()[i] != want.codes[i])
        return fail("code mismatch in trial " + std::to_string(trial));
    worst_gamma = std::max(worst_gamma, std::fabs(got.scale.gamma - want.gamma));
  }
  const double s = seconds_since(t0);
  if (worst_gamma > 1e-12) return fail("gamma error " + fmt("%.3g", worst_gamma));
  if (s >= 10.0) return fail("took " + fmt("%.1f s", s));
  return {true, "10000 matrices, max gamma error " + fmt("%.2g", worst_gamma) + ", " + fmt("%.2f s", s)};
}

// 2
Outcome kernel_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_int_distribution<int> code(-1, 1), act(-127, 127);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    Matrix<std::int8_t> c(n, k), x(m, k);
    for (auto& v : c.flat()) v = static_cast<std::int8_t>(code(rng));
    for (auto& v : x.flat()) v = static_cast<std::int8_t>(act(rng));
    const auto want = oracle::int_matmul({c.flat().begin(), c.flat().end()}, n,
                                         {x.flat().begin(), x.flat().end()}, m, k);
    const auto packed = pack(c);
    const auto fast = kernels::ternary_matmul(packed, x);
    const auto slow = kernels::ternary_matmul_serial(packed, x);
    for (std::size_t i = 0; i < want.size(); ++i)
      if (fast.flat()[i] != want[i] || slow.flat()[i] != want[i])
        return fail("mismatch in trial " + std::to_string(trial));
  }
  const double s = seconds_since(t0);
  if (s >= 30.0) return fail("took " + fmt("%.1f s", s));
  return {true, "1000 cases bitwise equal (parallel and serial), " + fmt("%.2f s", s)};
}

// 3
Outcome pack_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_int_distribution<int> code(-1, 1);
  std::size_t injected = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    Matrix<std::int8_t> c(dim(rng), dim(rng));
    for (auto& v : c.flat()) v = static_cast<std::int8_t>(code(rng));
    const auto t = pack(c, 0.5);
    if (!(unpack(t) == c)) return fail("round trip differs in trial " + std::to_string(trial));

    const std::size_t r = std::uniform_int_distribution<std::size_t>(0, c.rows() - 1)(rng);
    const std::size_t col = std::uniform_int_distribution<std::size_t>(0, c.cols() - 1)(rng);
    auto bytes = t.bytes();
    std::vector<std::uint8_t> corrupt(bytes.begin(), bytes.end());
    corrupt[r * packed_row_bytes(c.cols()) + col / 4] |= static_cast<std::uint8_t>(3u << (2 * (col % 4)));
    try {
      unpack(TernaryTensor(c.rows(), c.cols(), 0.5, corrupt));
      return fail("0b11 field not detected in trial " + std::to_string(trial));
    } catch (const Error& e) {
      if (e.code() != Errc::corrupt_data) return fail("wrong error kind for 0b11 field");
    }
    ++injected;
  }
  const double s = seconds_since(t0);
  if (s >= 10.0) return fail("took " + fmt("%.1f s", s));
  return {true, "10000 round trips, " + std::to_string(injected) + "/" +
                    std::to_string(injected) + " injected 0b11 fields detected, " + fmt("%.2f s", s)};
}

// 4
Outcome energy_ratio() {
  const cost::EnergyConstants c =
      cost::load_constants_file(cost::default_config_dir() / "energy_7nm.json");
  const double r = c.per_mac_ratio();
  if (std::fabs(r - 71.4) > 0.1) return fail("per-MAC ratio " + fmt("%.3f", r));
  return {true, "per-MAC ratio " + fmt("%.3f", r)};
}

// 5
Outcome scaling() {
  double prev = 0.0;
  std::string trail;
  for (const auto& label : cost::size_labels()) {
    const auto cfg = cost::load_size_config(label);
    const double r = cost::model_energy_per_token(cfg, cost::Mode::fp16) /
                     cost::model_energy_per_token(cfg, cost::Mode::ternary);
    if (!(r > prev)) return fail("energy ratio not increasing at " + label);
    prev = r;
    trail += label + "=" + fmt("%.2f", r) + " ";
  }
  for (const auto& [a, b] : {std::pair{"13B", "3B"}, std::pair{"30B", "7B"}, std::pair{"70B", "13B"}}) {
    const auto pr = cost::pareto_compare(cost::load_size_config(a), cost::load_size_config(b));
    if (pr.energy != cost::Verdict::first_better || pr.memory != cost::Verdict::first_better)
      return fail(std::string(a) + "-ternary does not dominate " + b + "-fp16");
    trail += std::string("| ") + a + ">" + b + " ";
  }
  return {true, trail + "dominance holds"};
}

// 6
Outcome memory_ratio() {
  // Real packed tensors from a quantized model.
  TransformerConfig cfg;
  cfg.hidden = 64;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.ffn_dim = 172;
  auto m = oracle::random_model(cfg, 6, false);
  QuantizeSummary summary;
  quantize_model_file(model_to_file(m), {}, false, &summary);
  if (summary.linear_fp16_bytes != 8 * summary.linear_packed_bytes)
    return fail("packed block linears are not exactly 8x smaller");
  for (const auto& label : cost::size_labels()) {
    const auto c = cost::load_size_config(label);
    if (cost::model_memory_bytes(c, cost::Mode::fp16).quantized_eligible_bytes !=
        8 * cost::model_memory_bytes(c, cost::Mode::ternary).quantized_eligible_bytes)
      return fail("analytic block-linear ratio is not 8x for " + label);
  }
  const auto three = cost::load_size_config("3B");
  const double r = static_cast<double>(cost::model_memory_bytes(three, cost::Mode::fp16).total()) /
                   cost::model_memory_bytes(three, cost::Mode::ternary).total();
  if (r < 3.0 || r > 8.0) return fail("3B whole-model ratio " + fmt("%.3f", r));
  return {true, "block linears 8.00x, 3B whole model " + fmt("%.2fx", r)};
}

std::string read_corpus() {
  std::ifstream is(TERNLM_TEST_CORPUS, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// 7
Outcome toy_training() {
  const std::string corpus = read_corpus();
  if (corpus.size() < 100 * 1024) return fail("corpus smaller than 100 KB");
  const auto t0 = Clock::now();
  TransformerConfig cfg;  // 2 layers, hidden 128
  train::TrainOptions opt;
  opt.steps = 2000;
  opt.seed = 42;
  const auto result = train::train_toy(cfg, corpus, opt);
  const auto model = model_from_file(train::export_quantized(result.latent, opt.quant));
  const auto ids = bytes_to_tokens(corpus);
  const double ppl = perplexity(model, ids);
  const double unigram = unigram_perplexity(ids);
  const double s = seconds_since(t0);

  // 100-step moving average, read every 100 steps across the final 1000.
  const auto& tr = result.loss_trace;
  std::vector<double> ma;
  for (std::size_t end = tr.size() - 1000; end <= tr.size(); end += 100) {
    double sum = 0.0;
    for (std::size_t i = end - 100; i < end; ++i) sum += tr[i];
    ma.push_back(sum / 100.0);
  }
  std::string trail;
  int rises = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    trail += fmt("%.3f", ma[i]) + (i + 1 < ma.size() ? "," : "");
    if (i && ma[i] > ma[i - 1]) ++rises;
  }
  const std::string detail = "ppl " + fmt("%.3f", ppl) + " vs unigram " + fmt("%.3f", unigram) +
                             ", moving average [" + trail + "], " + fmt("%.0f s", s);
  if (ppl > 0.9 * unigram) return fail("perplexity too high: " + detail);
  if (rises) return fail(std::to_string(rises) + " moving-average rise(s): " + detail);
  if (s >= 300.0) return fail("too slow: " + detail);
  return {true, detail};
}

// 8
Outcome gradient_check() {
  const auto t0 = Clock::now();
  TransformerConfig cfg;
  cfg.vocab = 16;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 12;
  cfg.max_seq = 6;
  const auto w = oracle::spread_weights(cfg, 8);
  const auto windows = oracle::random_windows(cfg, 2, 9);

  train::LatentWeights grad;
  train::loss_and_grad(w, windows, train::QuantMode::disabled(), &grad);
  const double fp_err = oracle::max_rel_error(w, grad, windows, train::QuantMode::disabled());
  if (!(fp_err < 1e-4)) return fail("full-precision relative error " + fmt("%.3g", fp_err));

  // Weight STE: gradient equals the full-precision gradient at the snapped point, bitwise.
  train::QuantMode wq;
  wq.activations = false;
  train::LatentWeights ste, ref;
  train::loss_and_grad(w, windows, wq, &ste);
  auto snapped = w;
  for (auto& l : snapped.layers)
    for (MatrixD* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down})
      quant::fake_quantize_weights(*m, {});
  train::loss_and_grad(snapped, windows, train::QuantMode::disabled(), &ref);
  auto a = ste.params();
  auto b = ref.params();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin()))
      return fail("weight STE gradient differs from pass-through for " + a[i].name);

  // Weight and activation STE against the frozen-offset reference.
  train::LatentWeights full;
  train::loss_and_grad(w, windows, {}, &full);
  const double ste_err = oracle::max_rel_error(w, full, windows, {});
  if (!(ste_err < 1e-4)) return fail("STE relative error " + fmt("%.3g", ste_err));
  const double s = seconds_since(t0);
  if (s >= 60.0) return fail("took " + fmt("%.1f s", s));
  return {true, "fp max rel error " + fmt("%.2g", fp_err) + ", weight STE bitwise equal, " +
                    "full STE max rel error " + fmt("%.2g", ste_err) + ", " + fmt("%.1f s", s)};
}

// 9
Outcome transformer_invariants() {
  TransformerConfig cfg;
  cfg.vocab = 40;
  cfg.hidden = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_dim = 24;
  cfg.max_seq = 16;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<std::size_t> len(2, cfg.max_seq), pos(0, 4096);
  std::uniform_int_distribution<Token> tok(0, static_cast<Token>(cfg.vocab) - 1);
  double soft = 0.0, norm = 0.0, rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_model(cfg, 900 + trial, trial % 2 == 0);

    MatrixD h(len(rng), cfg.hidden);
    for (double& v : h.flat()) v = 2.0 * n(rng);
    for (const auto& layer : m.weights.layers) {
      KvCache cache(cfg);
      AttentionProbe probe;
      h = attention_block(h, layer, cfg, cache.layers[0], m.qparams, &probe);
      for (const auto& row : probe.rows) {
        double s = 0.0;
        for (double p : row) s += p;
        soft = std::max(soft, std::fabs(s - 1.0));
      }
    }

    std::vector<double> q(cfg.head_dim()), k(cfg.head_dim());
    for (auto& v : q) v = n(rng);
    for (auto& v : k) v = n(rng);
    const std::size_t a = pos(rng), b = pos(rng), s = pos(rng);
    const auto rq = nn::rope_rotate(q, a, cfg.rope_theta);
    double nq = 0.0, nr = 0.0, d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      nq += q[i] * q[i];
      nr += rq[i] * rq[i];
    }
    norm = std::max(norm, std::fabs(std::sqrt(nq) - std::sqrt(nr)));
    const auto rk = nn::rope_rotate(k, b, cfg.rope_theta);
    const auto sq = nn::rope_rotate(q, a + s, cfg.rope_theta);
    const auto sk = nn::rope_rotate(k, b + s, cfg.rope_theta);
    for (std::size_t i = 0; i < q.size(); ++i) {
      d1 += rq[i] * rk[i];
      d2 += sq[i] * sk[i];
    }
    rel = std::max(rel, std::fabs(d1 - d2));

    std::vector<Token> ids(len(rng));
    for (auto& t : ids) t = tok(rng);
    const auto base = forward(m, ids);
    const std::size_t cut = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    for (std::size_t u = cut + 1; u < ids.size(); ++u) ids[u] = tok(rng);
    const auto changed = forward(m, ids);
    for (std::size_t r = 0; r <= cut; ++r)
      for (std::size_t v = 0; v < cfg.vocab; ++v)
        if (changed(r, v) != base(r, v)) return fail("causality broken in trial " + std::to_string(trial));

    const std::vector<Token> prompt(ids.begin(), ids.begin() + 1 + static_cast<long>(cut) / 2);
    if (tokens_to_bytes(greedy_generate(m, prompt, 8)) != tokens_to_bytes(greedy_generate(m, prompt, 8)))
      return fail("greedy decoding differs in trial " + std::to_string(trial));
  }
  if (soft > 1e-6) return fail("softmax deviation " + fmt("%.3g", soft));
  if (norm > 1e-6) return fail("rope norm deviation " + fmt("%.3g", norm));
  if (rel > 1e-5) return fail("rope relative-position deviation " + fmt("%.3g", rel));
  return {true, "100 trials: softmax " + fmt("%.1g", soft) + ", rope norm " + fmt("%.1g", norm) +
                    ", rope shift " + fmt("%.1g", rel) + ", causality and greedy decoding exact"};
}

// 10
Outcome pipeline() {
  const auto t0 = Clock::now();
  const fs::path dir = fs::temp_directory_path() / "ternlm_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  struct RestoreCwd {
    fs::path keep = fs::current_path();
    ~RestoreCwd() { fs::current_path(keep); }
  } restore;
  auto run = [&](std::vector<std::string> args, std::string& out) {
    args.insert(args.begin(), "ternlm");
    std::ostringstream o, e;
    const int code = cli::run(args, o, e);
    out = o.str();
    if (code) out += e.str();
    return code;
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  std::vector<std::string> transcripts;
  for (int rep = 0; rep < 2; ++rep) {
    // Same file names each time; the runs differ only in working directory.
    const fs::path work = dir / std::to_string(rep);
    fs::create_directories(work);
    fs::current_path(work);
    const std::string latent = "latent.bin", packed = "packed.bin";
    std::string out, all;
    if (run({"train-toy", "--corpus", TERNLM_TEST_CORPUS, "--steps", "300", "--seed", "7",
             "--out", latent, "--log-every", "0"}, out))
      return fail("train-toy failed: " + out);
    if (run({"quantize", "--input", latent, "--output", packed}, out))
      return fail("quantize failed: " + out);
    all += out;
    if (run({"infer", "--model", packed, "--prompt", "This License", "--max-new", "40"}, out))
      return fail("infer failed: " + out);
    all += out;
    if (run({"eval-ppl", "--model", packed, "--text", TERNLM_TEST_CORPUS}, out))
      return fail("eval-ppl failed: " + out);
    all += out;
    all += slurp(latent) + slurp(packed);
    transcripts.push_back(all);
  }
  fs::current_path(restore.keep);
  fs::remove_all(dir);
  const double s = seconds_since(t0);
  if (transcripts[0] != transcripts[1]) return fail("outputs differ between runs");
  if (s >= 360.0) return fail("took " + fmt("%.0f s", s));
  return {true, "two seeded runs byte-identical, " + fmt("%.0f s", s)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"quantizer oracle equivalence", quantizer_oracle},
      {"kernel exactness", kernel_exactness},
      {"pack round-trip", pack_round_trip},
      {"energy per-MAC ratio", energy_ratio},
      {"scaling monotonicity and dominance", scaling},
      {"memory ratio", memory_ratio},
      {"toy training", toy_training},
      {"gradient check", gradient_check},
      {"transformer invariants", transformer_invariants},
      {"end-to-end pipeline", pipeline},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && only != std::to_string(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": "
              << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
