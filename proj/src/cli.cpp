#include "ternlm/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <ostream>
#include <sstream>

#include "ternlm/costmodel.hpp"
#include "ternlm/kernels.hpp"
#include "ternlm/model.hpp"
#include "ternlm/trainer.hpp"
#include "ternlm/transformer.hpp"

namespace ternlm::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io, "cannot read " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::io, "cannot open " + tmp + " for writing");
    os << text;
    if (!os) {
      std::remove(tmp.c_str());
      throw Error(Errc::io, "failed writing " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw Error(Errc::io, "cannot rename " + tmp + ": " + ec.message());
  }
}

std::string escape(const std::string& bytes) {
  std::ostringstream os;
  for (unsigned char c : bytes) {
    if (c == '\\')
      os << "\\\\";
    else if (c == '\n')
      os << "\\n";
    else if (c >= 0x20 && c < 0x7f)
      os << c;
    else
      os << "\\x" << std::hex << std::setw(2) << std::setfill('0') << int(c)
         << std::dec << std::setfill(' ');
  }
  return os.str();
}

struct QuantizeArgs {
  std::string input, output;
  bool quantize_head = false;
  double epsilon = 1e-6;
};

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  const ModelFile in = load_model(a.input);
  quant::QuantizerParams p;
  p.epsilon = a.epsilon;
  p.validate();
  QuantizeSummary summary;
  const ModelFile q = quantize_model_file(in, p, a.quantize_head, &summary);
  save_model(q, a.output);
  out << std::setprecision(9);
  for (const auto& e : summary.entries)
    out << "tensor " << e.name << " gamma " << e.gamma << " fp16_bytes " << e.fp16_bytes
        << " packed_bytes " << e.packed_bytes << "\n";
  out << std::fixed << std::setprecision(2) << "linear_weight_ratio "
      << static_cast<double>(summary.linear_fp16_bytes) / summary.linear_packed_bytes
      << "x\n";
  out << "wrote " << a.output << "\n";
  return kExitOk;
}

struct InferArgs {
  std::string model, prompt;
  std::size_t max_new = 32;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const Model m = model_from_file(load_model(a.model));
  if (a.prompt.empty()) throw UsageError("--prompt must not be empty");
  const auto prompt = bytes_to_tokens(a.prompt);
  const auto gen = greedy_generate(m, prompt, a.max_new);
  out << "tokens";
  for (Token t : gen) out << ' ' << t;
  out << "\ntext " << escape(tokens_to_bytes(gen)) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string model, text;
};

int cmd_eval_ppl(const EvalArgs& a, std::ostream& out) {
  const Model m = model_from_file(load_model(a.model));
  const auto ids = bytes_to_tokens(read_file(a.text));
  const double ppl = perplexity(m, ids);
  out << "tokens " << ids.size() << "\n"
      << std::setprecision(9) << "perplexity " << ppl << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string corpus, out, quantized_out, loss_trace;
  std::size_t steps = 2000;
  std::uint64_t seed = 42;
  TransformerConfig cfg;
  std::size_t batch = 8;
  double lr = 3e-3;
  bool no_quant = false;
  std::size_t log_every = 100;
};

int cmd_train_toy(const TrainArgs& a, std::ostream& out) {
  const std::string corpus = read_file(a.corpus);
  a.cfg.validate();
  train::TrainOptions opt;
  opt.steps = a.steps;
  opt.seed = a.seed;
  opt.batch = a.batch;
  opt.learning_rate = a.lr;
  if (a.no_quant) opt.quant = train::QuantMode::disabled();
  opt.on_step = [&](std::size_t step, double loss) {
    if (a.log_every && (step % a.log_every == 0 || step + 1 == a.steps))
      out << "step " << step << " loss " << std::setprecision(6) << loss << "\n";
  };
  const auto result = train::train_toy(a.cfg, corpus, opt);
  save_model(train::export_f32(result.latent), a.out);
  out << "wrote " << a.out << "\n";
  if (!a.quantized_out.empty()) {
    save_model(train::export_quantized(result.latent, opt.quant), a.quantized_out);
    out << "wrote " << a.quantized_out << "\n";
  }
  if (!a.loss_trace.empty()) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i)
      os << i << "," << result.loss_trace[i] << "\n";
    write_text_atomic(a.loss_trace, os.str());
  }
  return kExitOk;
}

struct EstimateArgs {
  std::vector<std::string> sizes;
  std::string config, json, constants, compare;
  std::uint64_t tokens = 512;
  bool include_attention = false;
};

TransformerConfig resolve_size(const std::string& label) {
  const auto& labels = cost::size_labels();
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
    std::string known;
    for (const auto& l : labels) known += (known.empty() ? "" : ", ") + l;
    throw UsageError("unknown size label '" + label + "' (known: " + known + ")");
  }
  return cost::load_size_config(label);
}

int cmd_estimate(const EstimateArgs& a, std::ostream& out) {
  if (a.sizes.empty() == a.config.empty())
    throw UsageError("exactly one of --size or --config is required");
  const cost::EnergyConstants c =
      a.constants.empty() ? cost::EnergyConstants{} : cost::load_constants_file(a.constants);
  cost::EnergyOptions opt;
  opt.include_attention_scores = a.include_attention;

  std::vector<std::pair<std::string, TransformerConfig>> models;
  if (!a.config.empty()) {
    models.emplace_back(std::filesystem::path(a.config).stem().string(),
                        cost::load_config_file(a.config));
  } else if (a.sizes.size() == 1 && a.sizes[0] == "all") {
    for (const auto& l : cost::size_labels()) models.emplace_back(l, resolve_size(l));
  } else {
    for (const auto& l : a.sizes) models.emplace_back(l, resolve_size(l));
  }

  std::vector<cost::CostReport> reports;
  for (const auto& [label, cfg] : models)
    reports.push_back(cost::cost_report(label, cfg, a.tokens, c, opt));
  out << "constants " << c.process_node << " fp16_add " << c.fp16_add << " fp16_mul "
      << c.fp16_mul << " int8_add " << c.int8_add << " per_mac_ratio " << std::fixed
      << std::setprecision(2) << c.per_mac_ratio() << "\n";
  out.unsetf(std::ios::floatfield);
  out << cost::format_table(reports);

  nlohmann::json j;
  j["constants"] = cost::to_json(c);
  j["per_mac_ratio"] = c.per_mac_ratio();
  j["include_attention_scores"] = a.include_attention;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(cost::to_json(r));

  if (!a.compare.empty()) {
    const TransformerConfig base = resolve_size(a.compare);
    j["comparisons"] = nlohmann::json::array();
    for (const auto& [label, cfg] : models) {
      const auto pr = cost::pareto_compare(cfg, base, c);
      out << "compare " << label << "-ternary vs " << a.compare << "-fp16 energy "
          << cost::to_string(pr.energy) << " memory " << cost::to_string(pr.memory)
          << " dominates " << (pr.first_dominates ? "yes" : "no") << " latency "
          << cost::kLatencyNote << "\n";
      auto cj = cost::to_json(pr);
      cj["first"] = label + "-ternary";
      cj["second"] = a.compare + "-fp16";
      j["comparisons"].push_back(cj);
    }
  }
  if (!a.json.empty()) {
    write_text_atomic(a.json, j.dump(2) + "\n");
    out << "wrote " << a.json << "\n";
  }
  return kExitOk;
}

struct BenchArgs {
  std::string shape = "16,1024,1024";
  std::size_t reps = 5;
  std::string json;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  std::size_t m = 0, k = 0, n = 0;
  char c1 = 0, c2 = 0;
  std::istringstream is(a.shape);
  if (!(is >> m >> c1 >> k >> c2 >> n) || c1 != ',' || c2 != ',' || m == 0 || k == 0 ||
      n == 0 || !(is >> std::ws).eof())
    throw UsageError("--shape expects three positive integers m,k,n");
  if (a.reps == 0) throw UsageError("--reps must be positive");
  // m tokens, k input features, n output features.
  const auto r = kernels::kernel_bench(k, n, m, a.reps);
  out << "shape tokens " << m << " in " << k << " out " << n << " reps " << r.reps << "\n"
      << "elements " << r.elements << "\n"
      << "ternary_weight_bytes " << r.ternary_weight_bytes << "\n"
      << "fp16_weight_bytes " << r.fp16_weight_bytes << "\n"
      << "f32_weight_bytes " << r.f32_weight_bytes << "\n"
      << std::scientific << std::setprecision(4)
      << "ternary_omp_elements_per_s " << r.ternary_elements_per_s << "\n"
      << "ternary_serial_elements_per_s " << r.ternary_serial_elements_per_s << "\n"
      << "dense_f32_elements_per_s " << r.dense_elements_per_s << "\n";
  if (!a.json.empty()) {
    nlohmann::json j = {{"tokens", m},
                        {"in", k},
                        {"out", n},
                        {"reps", r.reps},
                        {"elements", r.elements},
                        {"ternary_weight_bytes", r.ternary_weight_bytes},
                        {"fp16_weight_bytes", r.fp16_weight_bytes},
                        {"f32_weight_bytes", r.f32_weight_bytes},
                        {"ternary_omp_elements_per_s", r.ternary_elements_per_s},
                        {"ternary_serial_elements_per_s", r.ternary_serial_elements_per_s},
                        {"dense_f32_elements_per_s", r.dense_elements_per_s}};
    write_text_atomic(a.json, j.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ternary-weight language model toolkit", "ternlm"};
  app.require_subcommand(1);

  QuantizeArgs qa;
  auto* quantize = app.add_subcommand("quantize", "Ternarize the block linears of a full-precision model");
  quantize->add_option("--input", qa.input, "F32 model file")->required();
  quantize->add_option("--output", qa.output, "output model file")->required();
  quantize->add_flag("--quantize-head", qa.quantize_head, "also ternarize the output head");
  quantize->add_option("--epsilon", qa.epsilon, "absmean epsilon");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Greedy decoding from a byte prompt");
  infer->add_option("--model", ia.model)->required();
  infer->add_option("--prompt", ia.prompt)->required();
  infer->add_option("--max-new", ia.max_new, "tokens to generate");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval-ppl", "Perplexity of a model on a text file");
  eval->add_option("--model", ea.model)->required();
  eval->add_option("--text", ea.text)->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train-toy", "Train a small ternary model from scratch");
  train->add_option("--corpus", ta.corpus, "raw byte corpus")->required();
  train->add_option("--steps", ta.steps);
  train->add_option("--seed", ta.seed);
  train->add_option("--out", ta.out, "full-precision latent model")->required();
  train->add_option("--quantized-out", ta.quantized_out, "also write the packed model");
  train->add_option("--loss-trace", ta.loss_trace, "CSV of step,loss");
  train->add_option("--hidden", ta.cfg.hidden);
  train->add_option("--layers", ta.cfg.layers);
  train->add_option("--heads", ta.cfg.heads);
  train->add_option("--ffn-dim", ta.cfg.ffn_dim);
  train->add_option("--max-seq", ta.cfg.max_seq);
  train->add_option("--batch", ta.batch);
  train->add_option("--lr", ta.lr);
  train->add_flag("--no-quant", ta.no_quant, "train the full-precision baseline");
  train->add_option("--log-every", ta.log_every);

  EstimateArgs sa;
  auto* estimate = app.add_subcommand("estimate", "Analytic energy and memory report");
  estimate->add_option("--size", sa.sizes, "size label(s), or 'all'");
  estimate->add_option("--config", sa.config, "transformer config JSON");
  estimate->add_option("--tokens", sa.tokens);
  estimate->add_option("--json", sa.json, "write the report as JSON");
  estimate->add_option("--constants", sa.constants, "energy constants JSON");
  estimate->add_option("--compare-fp16", sa.compare, "FP16 size label to test dominance against");
  estimate->add_flag("--include-attention", sa.include_attention,
                     "charge attention-score products at FP16 rates");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Ternary vs dense matmul micro-benchmark");
  bench->add_option("--shape", ba.shape, "tokens,in,out");
  bench->add_option("--reps", ba.reps);
  bench->add_option("--json", ba.json);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*quantize) return cmd_quantize(qa, out);
    if (*infer) return cmd_infer(ia, out);
    if (*eval) return cmd_eval_ppl(ea, out);
    if (*train) return cmd_train_toy(ta, out);
    if (*estimate) return cmd_estimate(sa, out);
    if (*bench) return cmd_bench(ba, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace ternlm::cli
