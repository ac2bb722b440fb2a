#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ternlm/layers.hpp"
#include "ternlm/transformer.hpp"

using namespace ternlm;

namespace {

TransformerConfig small_config() {
  TransformerConfig c;
  c.vocab = 32;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 24;
  c.max_seq = 12;
  return c;
}

std::vector<Token> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<Token> d(0, static_cast<Token>(vocab) - 1);
  std::vector<Token> ids(n);
  for (auto& t : ids) t = d(rng);
  return ids;
}

Linear zero_ternary(std::size_t r, std::size_t c) {
  return Linear(pack(Matrix<std::int8_t>(r, c, 0), 0.3));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("rmsnorm") {
  const std::vector<double> ones(4, 1.0);
  for (double v : nn::rmsnorm(ones, ones)) CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
  const auto y = nn::rmsnorm(std::vector<double>{2, 0, 0, 0}, ones);
  CHECK(y[0] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(y[1] == 0.0);
  for (double v : nn::rmsnorm(std::vector<double>{3, -1, 2, 5}, std::vector<double>(4, 0.0)))
    CHECK(v == 0.0);
  CHECK_THROWS_AS(nn::rmsnorm(ones, std::vector<double>(3, 1.0)), Error);
}

TEST_CASE("rope") {
  const std::vector<double> v{0.3, -1.2, 2.0, 0.5};
  CHECK(nn::rope_rotate(v, 0, 10000.0) == v);
  CHECK_THROWS_AS(nn::rope_rotate(std::vector<double>(3, 1.0), 1, 10000.0), Error);

  std::vector<double> w = v;
  nn::rope_rotate_inplace(w, 7, 10000.0);
  nn::rope_rotate_inplace(w, 7, 10000.0, true);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(w[i] == doctest::Approx(v[i]).epsilon(1e-12));

  // position 1, first pair rotates by exactly 1 radian
  const auto r = nn::rope_rotate(std::vector<double>{1, 0}, 1, 10000.0);
  CHECK(r[0] == doctest::Approx(std::cos(1.0)));
  CHECK(r[1] == doctest::Approx(std::sin(1.0)));
}

TEST_CASE("property: rope preserves norms and relative positions") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<std::size_t> pos(0, 2048), dim(1, 32);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 * dim(rng);
    std::vector<double> q(d), k(d);
    for (auto& x : q) x = n(rng);
    for (auto& x : k) x = n(rng);
    const std::size_t m = pos(rng), p = pos(rng), s = pos(rng);
    const auto rq = nn::rope_rotate(q, m, 10000.0);
    CHECK(std::fabs(std::sqrt(dot(rq, rq)) - std::sqrt(dot(q, q))) <= 1e-6);
    const double a = dot(rq, nn::rope_rotate(k, p, 10000.0));
    const double b = dot(nn::rope_rotate(q, m + s, 10000.0), nn::rope_rotate(k, p + s, 10000.0));
    CHECK(std::fabs(a - b) <= 1e-5);
  }
}

TEST_CASE("swiglu_ffn") {
  const auto cfg = small_config();
  const auto m = oracle::random_model(cfg, 3);
  const auto& L = m.weights.layers[0];
  const auto y0 = swiglu_ffn(MatrixD(2, cfg.hidden, 0.0), L.w_gate, L.w_up, L.w_down);
  for (double v : y0.flat()) CHECK(v == 0.0);

  MatrixD x(3, cfg.hidden);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (double& v : x.flat()) v = n(rng);
  const auto gated = swiglu_ffn(x, zero_ternary(cfg.ffn_dim, cfg.hidden), L.w_up, L.w_down);
  for (double v : gated.flat()) CHECK(v == 0.0);

  // scalar composition oracle
  oracle::Mat xs(3);
  for (std::size_t t = 0; t < 3; ++t) xs[t].assign(x.row(t).begin(), x.row(t).end());
  auto g = oracle::linear(xs, L.w_gate, 127);
  const auto u = oracle::linear(xs, L.w_up, 127);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < g[t].size(); ++i) g[t][i] = g[t][i] / (1 + std::exp(-g[t][i])) * u[t][i];
  const auto want = oracle::linear(g, L.w_down, 127);
  const auto got = swiglu_ffn(x, L.w_gate, L.w_up, L.w_down);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < cfg.hidden; ++i)
      CHECK(got(t, i) == doctest::Approx(want[t][i]).epsilon(1e-9));

  CHECK_THROWS_AS(swiglu_ffn(x, L.w_up, L.w_gate, L.w_gate), Error);
  CHECK(nn::silu(0.0) == 0.0);
}

TEST_CASE("attention_block") {
  const auto cfg = small_config();
  auto m = oracle::random_model(cfg, 8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;

  SUBCASE("single position attends with probability one") {
    MatrixD h(1, cfg.hidden);
    for (double& v : h.flat()) v = n(rng);
    KvCache cache(cfg);
    AttentionProbe probe;
    attention_block(h, m.weights.layers[0], cfg, cache.layers[0], {}, &probe);
    REQUIRE(probe.rows.size() == cfg.heads);
    for (const auto& row : probe.rows) {
      REQUIRE(row.size() == 1);
      CHECK(row[0] == 1.0);
    }
  }
  SUBCASE("zero projections reduce to the residual") {
    auto& L = m.weights.layers[0];
    L.wq = L.wk = L.wv = L.wo = zero_ternary(cfg.hidden, cfg.hidden);
    MatrixD h(5, cfg.hidden);
    for (double& v : h.flat()) v = n(rng);
    KvCache cache(cfg);
    CHECK(attention_block(h, L, cfg, cache.layers[0]) == h);
  }
  SUBCASE("positions beyond max_seq are rejected") {
    KvCache cache(cfg);
    attention_block(MatrixD(cfg.max_seq, cfg.hidden, 0.1), m.weights.layers[0], cfg, cache.layers[0]);
    CHECK_THROWS_AS(attention_block(MatrixD(1, cfg.hidden, 0.1), m.weights.layers[0], cfg, cache.layers[0]),
                    Error);
  }
}

TEST_CASE("property: attention rows are normalized") {
  const auto cfg = small_config();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_int_distribution<std::size_t> len(1, cfg.max_seq);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_model(cfg, 100 + trial);
    MatrixD h(len(rng), cfg.hidden);
    for (double& v : h.flat()) v = n(rng);
    for (const auto& L : m.weights.layers) {
      KvCache cache(cfg);
      AttentionProbe probe;
      h = attention_block(h, L, cfg, cache.layers[0], {}, &probe);
      for (const auto& row : probe.rows) {
        double s = 0.0;
        for (double p : row) s += p;
        REQUIRE(std::fabs(s - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("forward matches the straight-line oracle") {
  const auto cfg = small_config();
  std::mt19937_64 rng(40);
  for (bool ternary : {true, false}) {
    const auto m = oracle::random_model(cfg, 41, ternary);
    for (int trial = 0; trial < 5; ++trial) {
      const auto ids = random_ids(rng, 1 + trial * 2, cfg.vocab);
      const auto got = forward(m, ids);
      const auto want = oracle::forward(m, ids);
      REQUIRE(got.rows() == ids.size());
      REQUIRE(got.cols() == cfg.vocab);
      for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t v = 0; v < cfg.vocab; ++v)
          REQUIRE(std::fabs(got(t, v) - want[t][v]) <= 1e-5);
    }
  }
}

TEST_CASE("forward errors") {
  const auto cfg = small_config();
  const auto m = oracle::random_model(cfg, 2);
  CHECK_THROWS_AS(forward(m, std::vector<Token>{1, 32}), Error);
  CHECK_THROWS_AS(forward(m, std::vector<Token>{-1}), Error);
  CHECK_THROWS_AS(forward(m, std::vector<Token>(cfg.max_seq + 1, 0)), Error);
}

TEST_CASE("perplexity") {
  TransformerConfig cfg = small_config();
  cfg.vocab = 256;
  auto m = oracle::random_model(cfg, 4);
  m.weights.output = Linear(MatrixD(cfg.vocab, cfg.hidden, 0.0));
  std::mt19937_64 rng(6);
  const auto ids = random_ids(rng, 30, cfg.vocab);
  const auto logits = forward(m, std::span(ids).first(5));
  for (std::size_t t = 0; t < 5; ++t)
    CHECK(nn::log_sum_exp(logits.row(t)) - logits(t, ids[t]) == doctest::Approx(std::log(256.0)));
  CHECK(perplexity(m, ids) == doctest::Approx(256.0).epsilon(1e-12));
  CHECK_THROWS_AS(perplexity(m, std::vector<Token>{3}), Error);

  // One-hot embeddings and a head that maps token i to i + 1.
  TransformerConfig oc;
  oc.vocab = 8;
  oc.hidden = 8;
  oc.heads = 2;
  oc.layers = 1;
  oc.ffn_dim = 8;
  oc.max_seq = 16;
  Model sure;
  sure.config = oc;
  sure.weights.token_embedding = MatrixD(8, 8, 0.0);
  MatrixD head(8, 8, 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    sure.weights.token_embedding(i, i) = 1.0;
    head((i + 1) % 8, i) = 1000.0;
  }
  sure.weights.layers.push_back({std::vector<double>(8, 1.0), zero_ternary(8, 8),
                                 zero_ternary(8, 8), zero_ternary(8, 8), zero_ternary(8, 8),
                                 std::vector<double>(8, 1.0), zero_ternary(8, 8),
                                 zero_ternary(8, 8), zero_ternary(8, 8)});
  sure.weights.final_norm.assign(8, 1.0);
  sure.weights.output = Linear(head);
  std::vector<Token> cyc;
  for (int i = 0; i < 40; ++i) cyc.push_back(i % 8);
  CHECK(perplexity(sure, cyc) == 1.0);

  CHECK(unigram_perplexity(std::vector<Token>{0, 1, 1, 1, 1}) == doctest::Approx(1.0));
  CHECK(unigram_perplexity(std::vector<Token>{9, 1, 2, 1, 2}) == doctest::Approx(2.0));
}

TEST_CASE("property: causality is bitwise") {
  const auto cfg = small_config();
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<std::size_t> len(2, cfg.max_seq);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_model(cfg, 500 + trial % 10);
    auto ids = random_ids(rng, len(rng), cfg.vocab);
    const auto base = forward(m, ids);
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    for (std::size_t u = t + 1; u < ids.size(); ++u) ids[u] = (ids[u] + 1 + trial) % cfg.vocab;
    const auto changed = forward(m, ids);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t v = 0; v < cfg.vocab; ++v) REQUIRE(changed(r, v) == base(r, v));
  }
}

TEST_CASE("incremental decoding agrees with a full forward pass") {
  const auto cfg = small_config();
  const auto m = oracle::random_model(cfg, 60);
  std::mt19937_64 rng(61);
  const auto ids = random_ids(rng, 10, cfg.vocab);
  const auto full = forward(m, ids);
  DecodeSession s(m);
  const auto first = s.feed(std::span(ids).first(4));
  CHECK(s.position() == 4);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t v = 0; v < cfg.vocab; ++v) CHECK(first(t, v) == doctest::Approx(full(t, v)).epsilon(1e-9));
  for (std::size_t t = 4; t < ids.size(); ++t) {
    const auto row = s.feed(std::span(ids).subspan(t, 1));
    for (std::size_t v = 0; v < cfg.vocab; ++v) CHECK(row(0, v) == doctest::Approx(full(t, v)).epsilon(1e-9));
  }
}

TEST_CASE("greedy generation") {
  const auto cfg = small_config();
  std::mt19937_64 rng(70);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_model(cfg, 700 + trial % 5);
    const auto prompt = random_ids(rng, 1 + trial % 4, cfg.vocab);
    const auto a = greedy_generate(m, prompt, 6);
    REQUIRE(a == greedy_generate(m, prompt, 6));
    REQUIRE(a.size() == 6);
  }
  // Every context position is used; the final token is predicted but never fed.
  const auto m = oracle::random_model(cfg, 1);
  CHECK(greedy_generate(m, std::vector<Token>{1, 2, 3}, 100).size() == cfg.max_seq - 3 + 1);
  CHECK_THROWS_AS(greedy_generate(m, std::vector<Token>{}, 3), Error);
}

TEST_CASE("byte tokenizer") {
  const std::string s("a\0\xff", 3);
  const auto ids = bytes_to_tokens(s);
  CHECK(ids == std::vector<Token>{97, 0, 255});
  CHECK(tokens_to_bytes(ids) == s);
}

TEST_CASE("model files") {
  const auto cfg = small_config();
  const auto m = oracle::random_model(cfg, 80);
  auto f = model_to_file(m);
  for (const auto& t : f.tensors) CHECK(t.name.find("bias") == std::string::npos);
  const auto back = model_from_file(f);
  CHECK(back.weights.layers[1].w_down.is_ternary());
  CHECK_FALSE(back.weights.output.is_ternary());

  auto extra = f;
  extra.tensors.push_back(make_f32_record("layers.0.wq.bias", {cfg.hidden},
                                          std::vector<double>(cfg.hidden, 0.0)));
  CHECK_THROWS_AS(model_from_file(extra), Error);

  auto missing = f;
  missing.tensors.pop_back();
  CHECK_THROWS_AS(model_from_file(missing), Error);
}
