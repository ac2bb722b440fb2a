// Compares the OpenMP ternary kernel, its serial reference and the dense
// floating-point product on a sweep of shapes.
#include <cstdio>
#include <cstdlib>

#include <omp.h>

#include "ternlm/kernels.hpp"

int main(int argc, char** argv) {
  const std::size_t reps = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 5;
  struct Shape {
    std::size_t tokens, in, out;
  };
  const Shape shapes[] = {{1, 1024, 1024}, {16, 1024, 1024}, {16, 4096, 4096}, {64, 2048, 2048}};
  std::printf("threads %d\n", omp_get_max_threads());
  std::printf("%8s %6s %6s %14s %14s %14s %10s %8s\n", "tokens", "in", "out", "omp el/s",
              "serial el/s", "dense el/s", "omp/dense", "bytes x");
  for (const auto& s : shapes) {
    const auto r = ternlm::kernels::kernel_bench(s.in, s.out, s.tokens, reps);
    std::printf("%8zu %6zu %6zu %14.4e %14.4e %14.4e %10.2f %8.1f\n", s.tokens, s.in, s.out,
                r.ternary_elements_per_s, r.ternary_serial_elements_per_s,
                r.dense_elements_per_s, r.ternary_elements_per_s / r.dense_elements_per_s,
                static_cast<double>(r.f32_weight_bytes) / r.ternary_weight_bytes);
  }
  return 0;
}
