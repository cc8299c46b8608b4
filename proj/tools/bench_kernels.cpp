// Compares the serial reference kernels against the OpenMP variants and
// verifies that both produce identical bits.
//
//   bench_kernels [--size N] [--reps R] [--jobs J]

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>

#include "knlab/kernels.hpp"
#include "knlab/rng.hpp"

using namespace knlab;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& f, int reps) {
  f();  // warm-up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark: serial reference vs OpenMP"};
  int size = 384, reps = 5, jobs = 0;
  app.add_option("--size", size, "square matrix dimension");
  app.add_option("--reps", reps, "repetitions per measurement");
  app.add_option("--jobs", jobs, "worker cap (0 = OpenMP default)");
  CLI11_PARSE(app, argc, argv);

  if (jobs > 0) kernels::set_max_jobs(jobs);

  Rng rng(1);
  Array a({size, size}), b({size, size});
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.gauss();
  for (int64_t i = 0; i < b.size(); ++i) b[i] = rng.gauss();
  Array cs({size, size}), cp({size, size});

  const double ms_serial = time_ms(
      [&] { kernels::matmul_serial(a.data(), b.data(), cs.data(), size, size, size); }, reps);
  const double ms_omp = time_ms(
      [&] { kernels::matmul_omp(a.data(), b.data(), cp.data(), size, size, size); }, reps);

  bool identical = true;
  for (int64_t i = 0; i < cs.size(); ++i) identical = identical && cs[i] == cp[i];

  const double gflops = 2.0 * size * size * static_cast<double>(size) / 1e9;
  std::printf("matmul %dx%d, %d reps, jobs=%d\n", size, size, reps, kernels::max_jobs());
  std::printf("  serial reference: %8.2f ms  (%.2f GFLOP/s)\n", ms_serial, gflops / ms_serial * 1e3);
  std::printf("  OpenMP kernel:    %8.2f ms  (%.2f GFLOP/s)\n", ms_omp, gflops / ms_omp * 1e3);
  std::printf("  speedup: %.2fx, results %s\n", ms_serial / ms_omp,
              identical ? "bit-identical" : "DIFFER");
  return identical ? 0 : 1;
}
