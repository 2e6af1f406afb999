#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "prunekit/kernels.hpp"

using prunekit::kernels::ConvDims;
namespace K = prunekit::kernels;

namespace {

std::vector<float> random_vec(size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

template <typename F>
double time_ms(F&& fn, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool identical(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

void bench_conv(int n, int hw, int cin, int cout, int reps) {
    const ConvDims d = K::conv_dims(n, hw, hw, cin, 3, 3, cout, 1, 1);
    const auto in = random_vec(static_cast<size_t>(d.n) * d.h * d.w * d.cin, 1);
    const auto k = random_vec(static_cast<size_t>(d.r) * d.s * d.cin * d.cout, 2);
    const auto b = random_vec(static_cast<size_t>(d.cout), 3);
    std::vector<float> out_s(static_cast<size_t>(d.n) * d.ho * d.wo * d.cout);
    std::vector<float> out_p = out_s;

    const double ms_s = time_ms(
        [&] { K::conv2d_forward_serial(in.data(), k.data(), b.data(), d, out_s.data()); }, reps);
    const double ms_p = time_ms(
        [&] { K::conv2d_forward_omp(in.data(), k.data(), b.data(), d, out_p.data()); }, reps);
    std::printf("conv %dx%dx%dx%d -> %d   serial %8.2f ms   omp %8.2f ms   x%.2f   %s\n", n, hw,
                hw, cin, cout, ms_s, ms_p, ms_s / ms_p,
                identical(out_s, out_p) ? "bit-identical" : "MISMATCH");
}

void bench_fc(int n, int f, int k, int reps) {
    const auto in = random_vec(static_cast<size_t>(n) * f, 4);
    const auto w = random_vec(static_cast<size_t>(f) * k, 5);
    const auto b = random_vec(static_cast<size_t>(k), 6);
    std::vector<float> out_s(static_cast<size_t>(n) * k);
    std::vector<float> out_p = out_s;

    const double ms_s =
        time_ms([&] { K::fc_forward_serial(in.data(), w.data(), b.data(), n, f, k, out_s.data()); },
                reps);
    const double ms_p =
        time_ms([&] { K::fc_forward_omp(in.data(), w.data(), b.data(), n, f, k, out_p.data()); },
                reps);
    std::printf("fc   %dx%d -> %d          serial %8.2f ms   omp %8.2f ms   x%.2f   %s\n", n, f, k,
                ms_s, ms_p, ms_s / ms_p, identical(out_s, out_p) ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    bench_conv(8, 16, 16, 32, 20);
    bench_conv(8, 32, 32, 64, 5);
    bench_conv(16, 8, 64, 64, 10);
    bench_fc(64, 2048, 512, 50);
    bench_fc(256, 512, 10, 200);
    return 0;
}
