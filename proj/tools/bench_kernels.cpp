// Times the OpenMP kernels against their serial references and checks that
// both produce bitwise-identical outputs.

#include <omp.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "hashlat/core/kernels.hpp"
#include "hashlat/core/rng.hpp"

using namespace hashlat;

namespace {

struct BenchResult {
    double serial_s = 0.0;
    double parallel_s = 0.0;
    bool bitwise_equal = true;
};

template <typename SerialFn, typename ParallelFn>
BenchResult bench(SerialFn&& serial_fn, ParallelFn&& parallel_fn, std::vector<double>& out_serial,
                  std::vector<double>& out_parallel, int reps) {
    BenchResult r;
    double t0 = omp_get_wtime();
    for (int i = 0; i < reps; ++i) serial_fn();
    r.serial_s = (omp_get_wtime() - t0) / reps;
    t0 = omp_get_wtime();
    for (int i = 0; i < reps; ++i) parallel_fn();
    r.parallel_s = (omp_get_wtime() - t0) / reps;
    r.bitwise_equal = std::memcmp(out_serial.data(), out_parallel.data(),
                                  out_serial.size() * sizeof(double)) == 0;
    return r;
}

void report(const char* name, const BenchResult& r) {
    std::printf("%-28s serial %9.4f ms   parallel %9.4f ms   speedup %5.2fx   %s\n", name,
                r.serial_s * 1e3, r.parallel_s * 1e3, r.serial_s / r.parallel_s,
                r.bitwise_equal ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);

    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(12345);
    bool all_equal = true;

    {
        const int64_t m = 384, k = 512, n = 384;
        std::vector<double> a(m * k), b(k * n), c_s(m * n), c_p(m * n);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        auto r = bench(
            [&] { kernels::serial::matmul_nn(a.data(), b.data(), c_s.data(), m, k, n); },
            [&] { kernels::matmul_nn(a.data(), b.data(), c_p.data(), m, k, n); }, c_s, c_p, reps);
        report("matmul_nn 384x512x384", r);
        all_equal &= r.bitwise_equal;
    }
    {
        const int64_t m = 384, k = 512, n = 384;
        std::vector<double> a(m * k), b(n * k), c_s(m * n), c_p(m * n);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        auto r = bench(
            [&] { kernels::serial::matmul_nt(a.data(), b.data(), c_s.data(), m, k, n); },
            [&] { kernels::matmul_nt(a.data(), b.data(), c_p.data(), m, k, n); }, c_s, c_p, reps);
        report("matmul_nt 384x512x384", r);
        all_equal &= r.bitwise_equal;
    }
    {
        const int64_t ch = 16, h = 64, w = 64;
        std::vector<double> img(ch * h * w), col_s(h * w * ch * 9), col_p(h * w * ch * 9);
        for (auto& v : img) v = rng.normal();
        auto r = bench(
            [&] { kernels::serial::im2col(img.data(), ch, h, w, 3, 1, col_s.data()); },
            [&] { kernels::im2col(img.data(), ch, h, w, 3, 1, col_p.data()); }, col_s, col_p,
            reps);
        report("im2col 16x64x64", r);
        all_equal &= r.bitwise_equal;
    }
    {
        // Hamming scan over 200k packed 64-bit codes.
        const int64_t n = 200000, words = 1;
        std::vector<uint64_t> db(n * words);
        for (auto& v : db) v = rng.next_u64();
        uint64_t q = rng.next_u64();
        std::vector<int32_t> d_s(n), d_p(n);
        double t0 = omp_get_wtime();
        for (int i = 0; i < reps; ++i)
            kernels::serial::hamming_scan(db.data(), n, words, &q, d_s.data());
        double ts = (omp_get_wtime() - t0) / reps;
        t0 = omp_get_wtime();
        for (int i = 0; i < reps; ++i) kernels::hamming_scan(db.data(), n, words, &q, d_p.data());
        double tp = (omp_get_wtime() - t0) / reps;
        bool eq = std::memcmp(d_s.data(), d_p.data(), d_s.size() * sizeof(int32_t)) == 0;
        BenchResult r{ts, tp, eq};
        report("hamming_scan 200k x 64b", r);
        all_equal &= eq;
    }
    {
        const int64_t ch = 32, h = 64, w = 64;
        std::vector<double> in(ch * h * w), out_s(ch * h * w / 4), out_p(ch * h * w / 4);
        for (auto& v : in) v = rng.normal();
        auto r = bench([&] { kernels::serial::avgpool2(in.data(), ch, h, w, out_s.data()); },
                       [&] { kernels::avgpool2(in.data(), ch, h, w, out_p.data()); }, out_s,
                       out_p, reps);
        report("avgpool2 32x64x64", r);
        all_equal &= r.bitwise_equal;
    }

    if (!all_equal) {
        std::printf("FAILED: parallel kernels do not match serial references\n");
        return 1;
    }
    return 0;
}
