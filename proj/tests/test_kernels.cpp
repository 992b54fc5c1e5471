#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "dtd/kernels.hpp"
#include "dtd/rng.hpp"

namespace k = dtd::kernels;

TEST_CASE("omp matmul is bit-identical to the serial reference") {
    dtd::Rng rng(1);
    for (auto [m, kk, n] : {std::tuple{1, 1, 1}, {3, 4, 5}, {17, 31, 13}, {64, 200, 64}}) {
        std::vector<double> a(static_cast<std::size_t>(m) * kk), b(static_cast<std::size_t>(kk) * n);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        std::vector<double> c1(static_cast<std::size_t>(m) * n), c2(c1.size()), c3(c1.size());
        k::serial::matmul(a.data(), b.data(), c1.data(), m, kk, n);
        k::omp::matmul(a.data(), b.data(), c2.data(), m, kk, n);
        k::matmul(a.data(), b.data(), c3.data(), m, kk, n);
        CHECK(c1 == c2);
        CHECK(c1 == c3);
    }
}

TEST_CASE("matmul against a plain triple loop") {
    dtd::Rng rng(2);
    const int m = 5, kk = 7, n = 4;
    std::vector<double> a(m * kk), b(kk * n), c(m * n), ref(m * n, 0.0);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    k::matmul(a.data(), b.data(), c.data(), m, kk, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < kk; ++p) ref[i * n + j] += a[i * kk + p] * b[p * n + j];
    for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("omp kde sums are bit-identical to the serial reference") {
    dtd::Rng rng(3);
    const int nq = 37, bank = 211, dim = 6;
    std::vector<double> q(static_cast<std::size_t>(nq) * dim),
        b(static_cast<std::size_t>(bank) * dim);
    for (auto& v : q) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<double> o1(nq), o2(nq), o3(nq);
    k::serial::kde_kernel_sums(q.data(), nq, b.data(), bank, dim, 0.37, o1.data());
    k::omp::kde_kernel_sums(q.data(), nq, b.data(), bank, dim, 0.37, o2.data());
    k::kde_kernel_sums(q.data(), nq, b.data(), bank, dim, 0.37, o3.data());
    CHECK(o1 == o2);
    CHECK(o1 == o3);
}
