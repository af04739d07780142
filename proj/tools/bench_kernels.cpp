// Benchmark of the OpenMP kernels against the serial reference
// implementations, on the tensor shapes the model actually runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dproto/kernels.hpp"
#include "dproto/rng.hpp"
#include "dproto/threading.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, dproto::Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double time_ms(const std::function<void()>& fn, int iters) {
    fn();
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

struct Case {
    std::string name;
    double flops = 0.0;
    std::function<void()> omp;
    std::function<void()> ref;
    const std::vector<double>* omp_out = nullptr;
    const std::vector<double>* ref_out = nullptr;
};

void report(const Case& c, int iters) {
    const double ref_ms = time_ms(c.ref, iters);
    const double omp_ms = time_ms(c.omp, iters);
    const double diff = max_abs_diff(*c.omp_out, *c.ref_out);
    std::printf("%-28s %9.3f ms %9.3f ms %6.2fx %8.2f GF/s  max|diff| %.2e\n",
                c.name.c_str(), ref_ms, omp_ms, ref_ms / omp_ms,
                c.flops / (omp_ms * 1e6), diff);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dproto kernel benchmark: OpenMP kernels vs serial reference"};
    int iters = 20;
    int threads = 1;
    std::uint64_t seed = 42;
    app.add_option("--iters", iters, "timed iterations per kernel")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP thread count")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "rng seed");
    CLI11_PARSE(app, argc, argv);

    dproto::set_threads(threads);
    dproto::Rng rng(seed);

    std::printf("%-28s %12s %12s %7s %13s\n", "kernel", "serial", "openmp", "speedup",
                "throughput");

    struct ConvShape {
        std::string name;
        int cin, h, w, cout, kh, kw;
    };
    const std::vector<ConvShape> convs = {
        {"conv 3x56x56 -> 16", 3, 56, 56, 16, 3, 3},
        {"conv 16x28x28 -> 32", 16, 28, 28, 32, 3, 3},
        {"conv 32x14x14 -> 32", 32, 14, 14, 32, 3, 3},
    };

    for (const auto& cs : convs) {
        const int ho = cs.h, wo = cs.w;
        const auto x = random_vec(static_cast<std::size_t>(cs.cin) * cs.h * cs.w, rng);
        const auto w = random_vec(static_cast<std::size_t>(cs.cout) * cs.cin * cs.kh * cs.kw, rng);
        const auto b = random_vec(cs.cout, rng);
        const auto gy = random_vec(static_cast<std::size_t>(cs.cout) * ho * wo, rng);
        std::vector<double> y1(gy.size()), y2(gy.size());
        std::vector<double> gx1(x.size()), gx2(x.size());
        std::vector<double> gw1(w.size()), gw2(w.size());
        const double macs = static_cast<double>(cs.cout) * ho * wo * cs.cin * cs.kh * cs.kw;

        Case fwd;
        fwd.name = cs.name + " fwd";
        fwd.flops = 2.0 * macs;
        fwd.omp = [&, cs] {
            dproto::kern::conv2d_fwd(x.data(), w.data(), b.data(), y1.data(), cs.cin, cs.h,
                                     cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        fwd.ref = [&, cs] {
            dproto::kern::ref::conv2d_fwd(x.data(), w.data(), b.data(), y2.data(), cs.cin,
                                          cs.h, cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        fwd.omp_out = &y1;
        fwd.ref_out = &y2;
        report(fwd, iters);

        Case bwd_in;
        bwd_in.name = cs.name + " bwd_in";
        bwd_in.flops = 2.0 * macs;
        bwd_in.omp = [&, cs] {
            std::fill(gx1.begin(), gx1.end(), 0.0);
            dproto::kern::conv2d_bwd_input(gy.data(), w.data(), gx1.data(), cs.cin, cs.h,
                                           cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        bwd_in.ref = [&, cs] {
            std::fill(gx2.begin(), gx2.end(), 0.0);
            dproto::kern::ref::conv2d_bwd_input(gy.data(), w.data(), gx2.data(), cs.cin, cs.h,
                                                cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        bwd_in.omp_out = &gx1;
        bwd_in.ref_out = &gx2;
        report(bwd_in, iters);

        Case bwd_w;
        bwd_w.name = cs.name + " bwd_w";
        bwd_w.flops = 2.0 * macs;
        bwd_w.omp = [&, cs] {
            std::fill(gw1.begin(), gw1.end(), 0.0);
            dproto::kern::conv2d_bwd_weight(gy.data(), x.data(), gw1.data(), cs.cin, cs.h,
                                            cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        bwd_w.ref = [&, cs] {
            std::fill(gw2.begin(), gw2.end(), 0.0);
            dproto::kern::ref::conv2d_bwd_weight(gy.data(), x.data(), gw2.data(), cs.cin, cs.h,
                                                 cs.w, cs.cout, cs.kh, cs.kw, 1, 1, ho, wo);
        };
        bwd_w.omp_out = &gw1;
        bwd_w.ref_out = &gw2;
        report(bwd_w, iters);
    }

    {
        const int n = 64, d = 32, hw = 49;
        const auto feat = random_vec(static_cast<std::size_t>(d) * hw, rng);
        const auto masks = random_vec(static_cast<std::size_t>(n) * d * hw, rng);
        std::vector<double> z1(static_cast<std::size_t>(n) * d), z2(z1.size());
        Case c;
        c.name = "masked_gap 64x32x7x7";
        c.flops = 2.0 * n * d * hw;
        c.omp = [&] { dproto::kern::masked_gap_fwd(feat.data(), masks.data(), z1.data(), n, d, hw); };
        c.ref = [&] {
            dproto::kern::ref::masked_gap_fwd(feat.data(), masks.data(), z2.data(), n, d, hw);
        };
        c.omp_out = &z1;
        c.ref_out = &z2;
        report(c, iters);
    }

    {
        const int n = 64, k = 40, d = 32;
        const auto z = random_vec(static_cast<std::size_t>(n) * d, rng);
        const auto p = random_vec(static_cast<std::size_t>(k) * d, rng);
        std::vector<double> s1(static_cast<std::size_t>(n) * k), s2(s1.size());
        Case c;
        c.name = "pairwise_sqdist 64x40x32";
        c.flops = 3.0 * n * k * d;
        c.omp = [&] { dproto::kern::pairwise_sqdist_fwd(z.data(), p.data(), s1.data(), n, k, d); };
        c.ref = [&] {
            dproto::kern::ref::pairwise_sqdist_fwd(z.data(), p.data(), s2.data(), n, k, d);
        };
        c.omp_out = &s1;
        c.ref_out = &s2;
        report(c, iters);
    }

    {
        const int c_ = 1, h = 10, w = 10, ho = 56, wo = 56;
        const auto x = random_vec(static_cast<std::size_t>(c_) * h * w, rng);
        std::vector<double> y1(static_cast<std::size_t>(c_) * ho * wo), y2(y1.size());
        Case c;
        c.name = "upsample 10x10 -> 56x56";
        c.flops = 8.0 * y1.size();
        c.omp = [&] { dproto::kern::upsample_bilinear_fwd(x.data(), y1.data(), c_, h, w, ho, wo); };
        c.ref = [&] {
            dproto::kern::ref::upsample_bilinear_fwd(x.data(), y2.data(), c_, h, w, ho, wo);
        };
        c.omp_out = &y1;
        c.ref_out = &y2;
        report(c, iters);
    }

    return 0;
}
