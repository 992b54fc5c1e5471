#include "dtd/kernels.hpp"

#include <cmath>

namespace dtd::kernels {

namespace {

inline void matmul_row(const double* a_row, const double* b, double* c_row, int k, int n) {
    for (int j = 0; j < n; ++j) c_row[j] = 0.0;
    for (int p = 0; p < k; ++p) {
        const double apv = a_row[p];
        const double* b_row = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) c_row[j] += apv * b_row[j];
    }
}

inline double kde_sum_one(const double* q, const double* bank, int bank_size, int dim,
                          double inv_two_h2) {
    double acc = 0.0;
    for (int i = 0; i < bank_size; ++i) {
        const double d2 = squared_distance(q, bank + static_cast<std::size_t>(i) * dim, dim);
        acc += std::exp(-d2 * inv_two_h2);
    }
    return acc;
}

}  // namespace

double squared_distance(const double* x, const double* y, int dim) {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        matmul_row(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n,
                   k, n);
    }
}

void kde_kernel_sums(const double* queries, int n_queries, const double* bank, int bank_size,
                     int dim, double bandwidth, double* out) {
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for (int q = 0; q < n_queries; ++q) {
        out[q] = kde_sum_one(queries + static_cast<std::size_t>(q) * dim, bank, bank_size, dim,
                             inv_two_h2);
    }
}

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        matmul_row(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n,
                   k, n);
    }
}

void kde_kernel_sums(const double* queries, int n_queries, const double* bank, int bank_size,
                     int dim, double bandwidth, double* out) {
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
#pragma omp parallel for schedule(static)
    for (int q = 0; q < n_queries; ++q) {
        out[q] = kde_sum_one(queries + static_cast<std::size_t>(q) * dim, bank, bank_size, dim,
                             inv_two_h2);
    }
}

}  // namespace omp

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    // Fork overhead dominates below this; the cutoff only affects speed.
    const long long work = static_cast<long long>(m) * k * n;
    if (m >= 2 && work >= 64LL * 1024) {
        omp::matmul(a, b, c, m, k, n);
    } else {
        serial::matmul(a, b, c, m, k, n);
    }
}

void kde_kernel_sums(const double* queries, int n_queries, const double* bank, int bank_size,
                     int dim, double bandwidth, double* out) {
    const long long work = static_cast<long long>(n_queries) * bank_size * dim;
    if (n_queries >= 2 && work >= 32LL * 1024) {
        omp::kde_kernel_sums(queries, n_queries, bank, bank_size, dim, bandwidth, out);
    } else {
        serial::kde_kernel_sums(queries, n_queries, bank, bank_size, dim, bandwidth, out);
    }
}

}  // namespace dtd::kernels
