// Serial-reference vs OpenMP kernel timings: dense matmul, memory-bank KDE
// sums, and end-to-end window scoring.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dtd/data.hpp"
#include "dtd/detector.hpp"
#include "dtd/kernels.hpp"
#include "dtd/rng.hpp"
#include "dtd/trainer.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_matmul(int m, int k, int n) {
    dtd::Rng rng(2024);
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
        c1(static_cast<std::size_t>(m) * n), c2(c1.size());
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();

    const double ts = time_best_of(3, [&] { dtd::kernels::serial::matmul(a.data(), b.data(), c1.data(), m, k, n); });
    const double tp = time_best_of(3, [&] { dtd::kernels::omp::matmul(a.data(), b.data(), c2.data(), m, k, n); });
    const double gflop = 2.0 * m * k * n / 1e9;
    bool equal = c1 == c2;
    std::printf("matmul %4dx%4dx%4d  serial %8.2f ms (%5.2f GF/s)  omp %8.2f ms (%5.2f GF/s)  speedup %4.2fx  bitwise %s\n",
                m, k, n, ts * 1e3, gflop / ts, tp * 1e3, gflop / tp, ts / tp,
                equal ? "equal" : "DIFFER");
}

void bench_kde(int queries, int bank, int dim) {
    dtd::Rng rng(7);
    std::vector<double> q(static_cast<std::size_t>(queries) * dim),
        b(static_cast<std::size_t>(bank) * dim), o1(queries), o2(queries);
    for (auto& v : q) v = rng.normal();
    for (auto& v : b) v = rng.normal();

    const double ts = time_best_of(3, [&] {
        dtd::kernels::serial::kde_kernel_sums(q.data(), queries, b.data(), bank, dim, 0.5, o1.data());
    });
    const double tp = time_best_of(3, [&] {
        dtd::kernels::omp::kde_kernel_sums(q.data(), queries, b.data(), bank, dim, 0.5, o2.data());
    });
    bool equal = o1 == o2;
    std::printf("kde sums %5d queries x %5d bank x %2dd  serial %8.2f ms  omp %8.2f ms  speedup %4.2fx  bitwise %s\n",
                queries, bank, dim, ts * 1e3, tp * 1e3, ts / tp, equal ? "equal" : "DIFFER");
}

void bench_scoring() {
    // A small trained-shape pipeline, scored serially vs with the OpenMP
    // window loop.
    dtd::SyntheticSpec spec;
    spec.channels = 8;
    spec.length = 4000;
    spec.ar_coeff.assign(8, 0.9);
    spec.seed = 11;
    dtd::TimeSeriesDataset ds = dtd::synth_generate(spec);

    dtd::TrainConfig tc;
    tc.branch = dtd::Branch::kde;
    tc.epochs = 1;
    tc.T = 32;
    tc.beta_start = 0.02;
    tc.beta_end = 0.3;
    tc.bank_capacity = 1024;
    tc.predictor.variant = dtd::PredictorVariant::mlp;
    tc.predictor.d = 8;
    tc.predictor.history = 8;
    tc.predictor.hidden = 32;
    auto windows = dtd::train_windows(ds, 8, 1);
    dtd::Pipeline p = dtd::train(windows, tc);
    auto scorer = dtd::make_scorer(p);
    auto test = dtd::test_windows(ds, 8, 1);

    const dtd::Rng rng(3);
    const auto t0 = Clock::now();
    dtd::ScoreTrace serial_trace(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        serial_trace[i].score = dtd::score_sample(p.predictor, *scorer, p.schedule, test[i].x0,
                                                  test[i].x_hist, rng.split(i));
    }
    const double ts = seconds_since(t0);

    const auto t1 = Clock::now();
    dtd::ScoreTrace par_trace = dtd::score_windows(p.predictor, *scorer, p.schedule, test, rng);
    const double tp = seconds_since(t1);

    bool equal = true;
    for (std::size_t i = 0; i < test.size(); ++i) {
        equal = equal && serial_trace[i].score == par_trace[i].score;
    }
    std::printf("window scoring %4zu windows  serial %8.2f ms  omp %8.2f ms  speedup %4.2fx  bitwise %s\n",
                test.size(), ts * 1e3, tp * 1e3, ts / tp, equal ? "equal" : "DIFFER");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both variants run serially\n");
#endif
    bench_matmul(64, 200, 64);
    bench_matmul(256, 256, 256);
    bench_matmul(512, 512, 512);
    bench_kde(64, 2048, 8);
    bench_kde(2048, 2048, 16);
    bench_scoring();
    return 0;
}
