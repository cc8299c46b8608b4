#include "knlab/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <sstream>

namespace knlab {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

}  // namespace knlab

namespace knlab::kernels {

namespace {
std::atomic<int> g_max_jobs{0};  // 0 = use the OpenMP default

// work threshold below which the fork overhead dominates
constexpr int64_t kParallelCutoff = 1 << 16;
}  // namespace

int max_jobs() {
  int n = g_max_jobs.load(std::memory_order_relaxed);
  return n > 0 ? n : omp_get_max_threads();
}

void set_max_jobs(int n) { g_max_jobs.store(n, std::memory_order_relaxed); }

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(max_jobs())
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] = 0.0;
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<int64_t>(p) * m;
    const double* bp = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n) {
  // parallel over output rows; the k-loop stays innermost and sequential so
  // each element sees the same summation order as the serial kernel
#pragma omp parallel for schedule(static) num_threads(max_jobs())
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<int64_t>(p) * m + i];
      const double* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<int64_t>(i) * k;
    double* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<int64_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(max_jobs())
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<int64_t>(i) * k;
    double* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<int64_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

namespace {
bool big_enough(int m, int k, int n) {
  return static_cast<int64_t>(m) * k * n >= kParallelCutoff && m >= 8;
}
}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (big_enough(m, k, n) && !omp_in_parallel())
    matmul_omp(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  // transposed-A kernel folds over k rows of A; same row-ownership rule
  if (big_enough(m, k, n) && !omp_in_parallel())
    matmul_tn_omp(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (big_enough(m, k, n) && !omp_in_parallel())
    matmul_nt_omp(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

Array matmul(const Array& a, const Array& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  Array c({a.dim(0), b.dim(1)});
  matmul(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

void parallel_for(int n, const std::function<void(int)>& f) {
  if (n <= 1 || omp_in_parallel()) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
#pragma omp parallel for schedule(dynamic, 1) num_threads(max_jobs())
  for (int i = 0; i < n; ++i) f(i);
}

}  // namespace knlab::kernels
