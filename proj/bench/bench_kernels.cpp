#include "camvr/init.hpp"
#include "camvr/kernels.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>

using namespace camvr;

namespace {

double time_ms(const std::function<void()> &f, int reps) {
  f();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i)
    f();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

void row(const char *name, double serial, double parallel, double diff) {
  std::printf("%-28s serial %9.3f ms  omp %9.3f ms  speedup %5.2fx  max|diff| %.1e\n", name,
              serial, parallel, serial / parallel, diff);
}

} // namespace

int main() {
  std::mt19937_64 rng(7);
  std::printf("threads: %d\n", omp_get_max_threads());

  for (std::size_t n : {64, 256, 512}) {
    Tensor a = uniform({n, n}, 1.0, rng), b = uniform({n, n}, 1.0, rng);
    Tensor c1({n, n}), c2({n, n});
    const double s = time_ms([&] { kernels::gemm_serial(false, false, n, n, n, a.data(), b.data(), c1.data(), false); }, 3);
    const double p = time_ms([&] { kernels::gemm(false, false, n, n, n, a.data(), b.data(), c2.data(), false); }, 3);
    char name[64];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", n, n, n);
    row(name, s, p, max_abs_diff(c1, c2));
  }

  for (std::size_t hw : {6, 32, 96}) {
    kernels::ConvGeometry g{hw, hw, 40, 3, 3, 8};
    Tensor x = uniform({hw, hw, 40}, 1.0, rng), k = uniform({3, 3, 40, 8}, 1.0, rng);
    Tensor y1({hw, hw, 8}), y2({hw, hw, 8});
    const double s = time_ms([&] { kernels::conv2d_serial(g, x.data(), k.data(), y1.data()); }, 5);
    const double p = time_ms([&] { kernels::conv2d(g, x.data(), k.data(), y2.data()); }, 5);
    char name[64];
    std::snprintf(name, sizeof name, "conv3x3 %zux%zux40->8", hw, hw);
    row(name, s, p, max_abs_diff(y1, y2));
  }
  return 0;
}
