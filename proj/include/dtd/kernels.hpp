#pragma once

#include <cstddef>

namespace dtd::kernels {

// Serial reference kernels. These are the ground truth the parallel variants
// are tested against and stay in the build permanently.
namespace serial {

// C(M x N) = A(M x K) * B(K x N), row-major, C overwritten.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// out[q] = sum_i exp(-||query_q - bank_i||^2 / (2 h^2)), bank: M x d row-major.
void kde_kernel_sums(const double* queries, int n_queries, const double* bank,
                     int bank_size, int dim, double bandwidth, double* out);

}  // namespace serial

// OpenMP kernels. Parallelism is across independent output elements only
// (rows of C, query points), so every element is accumulated in the same
// order as the serial reference and results are bit-identical.
namespace omp {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);

void kde_kernel_sums(const double* queries, int n_queries, const double* bank,
                     int bank_size, int dim, double bandwidth, double* out);

}  // namespace omp

// Dispatching entry points used by the rest of the library: parallel when the
// problem is big enough to amortize the fork, serial reference otherwise.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void kde_kernel_sums(const double* queries, int n_queries, const double* bank,
                     int bank_size, int dim, double bandwidth, double* out);

double squared_distance(const double* x, const double* y, int dim);

}  // namespace dtd::kernels
