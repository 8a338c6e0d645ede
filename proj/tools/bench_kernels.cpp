// Times the OpenMP kernel paths against the serial reference implementations
// and checks that the two produce bit-identical output. Sizes roughly follow
// the shapes the model actually runs: attention-scale GEMMs and the first
// convolution layers of the feature extractor.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "capcore/kernels.hpp"
#include "capcore/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm-up, also the run whose output gets compared
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = clock_type::now();
        fn();
        auto t1 = clock_type::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

std::vector<double> random_vec(size_t n, capcore::Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Row {
    std::string name;
    double serial_ms;
    double parallel_ms;
    bool identical;
};

void print_rows(const std::vector<Row>& rows) {
    std::printf("%-34s %12s %12s %9s %10s\n",
                "kernel", "serial ms", "openmp ms", "speedup", "bit-equal");
    for (const auto& r : rows) {
        std::printf("%-34s %12.3f %12.3f %8.2fx %10s\n",
                    r.name.c_str(), r.serial_ms, r.parallel_ms,
                    r.serial_ms / r.parallel_ms, r.identical ? "yes" : "NO");
    }
}

} // namespace

int main(int argc, char** argv) {
    int reps = 5;
    double scale = 1.0;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--quick") {
            reps = 2;
            scale = 0.5;
        } else if (arg == "--reps" && i + 1 < argc) {
            reps = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--quick] [--reps N]\n", argv[0]);
            return 1;
        }
    }

#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; both columns run the serial path\n");
#endif
    std::printf("reps per kernel: %d (best-of)\n\n", reps);

    capcore::Rng rng(2024);
    std::vector<Row> rows;
    namespace kn = capcore::kernels;

    auto bench_gemm = [&](const char* name, int64_t m, int64_t k, int64_t n,
                          auto&& par, auto&& ser) {
        auto a = random_vec(static_cast<size_t>(m * k), rng);
        auto b = random_vec(static_cast<size_t>(k * n), rng);
        std::vector<double> cp(static_cast<size_t>(m * n));
        std::vector<double> cs(static_cast<size_t>(m * n));
        kn::set_parallel(true);
        double pms = time_ms([&] { par(a.data(), b.data(), cp.data(), m, k, n, false); }, reps);
        kn::set_parallel(false);
        double sms = time_ms([&] { ser(a.data(), b.data(), cs.data(), m, k, n, false); }, reps);
        char label[96];
        std::snprintf(label, sizeof(label), "%s %lldx%lldx%lld", name,
                      static_cast<long long>(m), static_cast<long long>(k),
                      static_cast<long long>(n));
        rows.push_back({label, sms, pms, bit_equal(cp, cs)});
    };

    const auto gm = static_cast<int64_t>(256 * scale);
    bench_gemm("gemm_nn", gm, 512, 512, kn::gemm_nn, kn::serial::gemm_nn);
    bench_gemm("gemm_nt", gm, 512, 512, kn::gemm_nt, kn::serial::gemm_nt);
    bench_gemm("gemm_tn", gm, 512, 512, kn::gemm_tn, kn::serial::gemm_tn);

    // Conv shapes: the stem (3 -> 16 channels over a full frame) and a middle
    // residual stage (32 -> 32 over a downsampled map).
    struct ConvShape {
        const char* name;
        int64_t ci, h, w, co, kh, kw, stride, pad;
    };
    const ConvShape shapes[] = {
        {"conv stem", 3, static_cast<int64_t>(96 * scale + 32), static_cast<int64_t>(96 * scale + 32), 16, 3, 3, 1, 1},
        {"conv stage", 32, static_cast<int64_t>(32 * scale + 16), static_cast<int64_t>(32 * scale + 16), 32, 3, 3, 1, 1},
    };
    for (const auto& s : shapes) {
        const int64_t oh = (s.h + 2 * s.pad - s.kh) / s.stride + 1;
        const int64_t ow = (s.w + 2 * s.pad - s.kw) / s.stride + 1;
        auto x = random_vec(static_cast<size_t>(s.ci * s.h * s.w), rng);
        auto k = random_vec(static_cast<size_t>(s.co * s.ci * s.kh * s.kw), rng);
        auto gy = random_vec(static_cast<size_t>(s.co * oh * ow), rng);
        char label[96];

        std::vector<double> yp(static_cast<size_t>(s.co * oh * ow));
        std::vector<double> ys(yp.size());
        kn::set_parallel(true);
        double pms = time_ms([&] {
            kn::conv2d_forward(x.data(), k.data(), yp.data(), s.ci, s.h, s.w,
                               s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        kn::set_parallel(false);
        double sms = time_ms([&] {
            kn::serial::conv2d_forward(x.data(), k.data(), ys.data(), s.ci, s.h, s.w,
                                       s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        std::snprintf(label, sizeof(label), "%s fwd %lldx%lldx%lld->%lld", s.name,
                      static_cast<long long>(s.ci), static_cast<long long>(s.h),
                      static_cast<long long>(s.w), static_cast<long long>(s.co));
        rows.push_back({label, sms, pms, bit_equal(yp, ys)});

        std::vector<double> gxp(x.size(), 0.0);
        std::vector<double> gxs(x.size(), 0.0);
        kn::set_parallel(true);
        pms = time_ms([&] {
            std::fill(gxp.begin(), gxp.end(), 0.0);
            kn::conv2d_grad_input(gy.data(), k.data(), gxp.data(), s.ci, s.h, s.w,
                                  s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        kn::set_parallel(false);
        sms = time_ms([&] {
            std::fill(gxs.begin(), gxs.end(), 0.0);
            kn::serial::conv2d_grad_input(gy.data(), k.data(), gxs.data(), s.ci, s.h, s.w,
                                          s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        std::snprintf(label, sizeof(label), "%s grad-input", s.name);
        rows.push_back({label, sms, pms, bit_equal(gxp, gxs)});

        std::vector<double> gkp(k.size(), 0.0);
        std::vector<double> gks(k.size(), 0.0);
        kn::set_parallel(true);
        pms = time_ms([&] {
            std::fill(gkp.begin(), gkp.end(), 0.0);
            kn::conv2d_grad_kernel(gy.data(), x.data(), gkp.data(), s.ci, s.h, s.w,
                                   s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        kn::set_parallel(false);
        sms = time_ms([&] {
            std::fill(gks.begin(), gks.end(), 0.0);
            kn::serial::conv2d_grad_kernel(gy.data(), x.data(), gks.data(), s.ci, s.h, s.w,
                                           s.co, s.kh, s.kw, s.stride, s.pad, oh, ow);
        }, reps);
        std::snprintf(label, sizeof(label), "%s grad-kernel", s.name);
        rows.push_back({label, sms, pms, bit_equal(gkp, gks)});
    }

    kn::set_parallel(true);
    print_rows(rows);

    bool all_ok = std::all_of(rows.begin(), rows.end(),
                              [](const Row& r) { return r.identical; });
    if (!all_ok) {
        std::fprintf(stderr, "error: parallel and serial outputs differ\n");
        return 2;
    }
    return 0;
}
