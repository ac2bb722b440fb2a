#include <algorithm>
#include <chrono>
#include <random>

#include "ternlm/kernels.hpp"

namespace ternlm::kernels {

namespace {

template <typename F>
double median_seconds(std::size_t reps, F&& f) {
  std::vector<double> times;
  times.reserve(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const double mid = times[times.size() / 2];
  // Clock resolution floor so throughputs stay finite on tiny shapes.
  return std::max(mid, 1e-9);
}

}  // namespace

BenchReport kernel_bench(std::size_t in, std::size_t out, std::size_t tokens,
                         std::size_t reps, std::uint64_t seed) {
  if (in == 0 || out == 0 || tokens == 0 || reps == 0)
    throw Error(Errc::validation, "kernel_bench: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> code(-1, 1);
  std::uniform_int_distribution<int> act(-127, 127);
  std::uniform_real_distribution<float> real(-1.0f, 1.0f);

  Matrix<std::int8_t> codes(out, in);
  for (auto& c : codes.flat()) c = static_cast<std::int8_t>(code(rng));
  const TernaryTensor w = pack(codes, 1.0);
  Matrix<std::int8_t> x(tokens, in);
  for (auto& v : x.flat()) v = static_cast<std::int8_t>(act(rng));

  Matrix<float> xa(tokens, in), wb(in, out);
  for (auto& v : xa.flat()) v = real(rng);
  for (auto& v : wb.flat()) v = real(rng);

  BenchReport r;
  r.in = in;
  r.out = out;
  r.tokens = tokens;
  r.reps = reps;
  r.elements = static_cast<std::uint64_t>(tokens) * in * out;
  r.ternary_weight_bytes = w.bytes().size();
  r.f32_weight_bytes = static_cast<std::uint64_t>(in) * out * 4;
  r.fp16_weight_bytes = static_cast<std::uint64_t>(in) * out * 2;

  volatile std::int64_t sink = 0;
  r.ternary_seconds = median_seconds(reps, [&] { sink = sink + ternary_matmul(w, x)(0, 0); });
  r.ternary_serial_seconds =
      median_seconds(reps, [&] { sink = sink + ternary_matmul_serial(w, x)(0, 0); });
  volatile double fsink = 0;
  r.dense_seconds = median_seconds(reps, [&] { fsink = fsink + dense_matmul(xa, wb)(0, 0); });

  const double e = static_cast<double>(r.elements);
  r.ternary_elements_per_s = e / r.ternary_seconds;
  r.ternary_serial_elements_per_s = e / r.ternary_serial_seconds;
  r.dense_elements_per_s = e / r.dense_seconds;
  return r;
}

}  // namespace ternlm::kernels
