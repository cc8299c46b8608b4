#pragma once

#include <functional>

#include "knlab/array.hpp"

// Matrix kernels used by the autodiff graph. Each kernel has a serial
// reference implementation and an OpenMP variant; the OpenMP variants
// assign each output element to exactly one thread, so results are
// bit-identical to the serial versions for any thread count.

namespace knlab::kernels {

// global worker cap used by every parallel region in the library
int max_jobs();
void set_max_jobs(int n);

// C(m,n) = A(m,k) @ B(k,n)
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n);

// C(m,n) = A(k,m)^T @ B(k,n)
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n);

// C(m,n) = A(m,k) @ B(n,k)^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n);

// dispatchers: pick the OpenMP variant when the problem is large enough
// to amortize the fork. The cutoff is fixed so the choice never depends
// on the environment.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

Array matmul(const Array& a, const Array& b);

// run f(i) for i in [0,n) across the worker pool; every iteration is
// independent so scheduling cannot change results
void parallel_for(int n, const std::function<void(int)>& f);

}  // namespace knlab::kernels
