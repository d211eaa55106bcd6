// Kernel benchmark: OpenMP-parallel kernels against their serial references,
// and the packed XNOR/popcount dot against the float path. The correctness
// cross-checks here mirror the unit tests; timings are informational.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "rebnn/binarize.hpp"
#include "rebnn/bitkernel.hpp"
#include "rebnn/nn_ops.hpp"
#include "rebnn/rng.hpp"

using namespace rebnn;

namespace {

using clock_t_ = std::chrono::steady_clock;

template <typename F>
double time_ms(F&& fn, int reps) {
    fn();  // warmup
    std::vector<double> times;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = clock_t_::now();
        fn();
        const auto t1 = clock_t_::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double best = times[0];
    for (double t : times) best = std::min(best, t);
    return best;
}

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor t(shape);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

void bench_conv(std::size_t c, std::size_t hw, int reps) {
    Rng rng(7);
    const Tensor x = random_tensor({c, hw, hw}, rng);
    const Tensor w = random_tensor({c, c, 3, 3}, rng);

    Tensor out_par, out_ser;
    const double t_par = time_ms([&] { out_par = conv2d_forward(x, w, 1, 1); }, reps);
    const double t_ser = time_ms([&] { out_ser = serial::conv2d_forward(x, w, 1, 1); }, reps);
    const bool same = out_par.data.size() == out_ser.data.size() &&
                      std::memcmp(out_par.data.data(), out_ser.data.data(),
                                  out_par.data.size() * sizeof(float)) == 0;
    std::printf("conv2d %zux%zux%zu k3      omp %8.3f ms   serial %8.3f ms   x%.2f   bitwise %s\n",
                c, hw, hw, t_par, t_ser, t_ser / t_par, same ? "equal" : "DIFFERENT");
}

void bench_binary_conv(std::size_t c, std::size_t hw, int reps) {
    Rng rng(11);
    BinaryLayer layer;
    layer.latent_weight = random_tensor({c, c, 3, 3}, rng);
    layer.alpha.assign(c, 0.5f);
    layer.gamma.assign(c, 0.0f);
    const Tensor x = random_tensor({c, hw, hw}, rng);
    const Tensor sx = sign_binarize(x);
    const PackedBitTensor pw = pack_weight_signs(layer);

    Tensor out_float, out_packed, out_packed_ser;
    const double t_float = time_ms([&] { out_float = binary_conv_forward(x, layer, 1, 1); }, reps);
    const double t_packed = time_ms(
        [&] { out_packed = binary_conv_packed(sx, pw, layer.alpha, 3, 1, 1); }, reps);
    const double t_packed_ser = time_ms(
        [&] { out_packed_ser = serial::binary_conv_packed(sx, pw, layer.alpha, 3, 1, 1); }, reps);
    const bool eq_fp = std::memcmp(out_float.data.data(), out_packed.data.data(),
                                   out_float.data.size() * sizeof(float)) == 0;
    const bool eq_ps = std::memcmp(out_packed_ser.data.data(), out_packed.data.data(),
                                   out_packed.data.size() * sizeof(float)) == 0;
    std::printf(
        "binconv %zux%zux%zu k3     float %7.3f ms   packed %7.3f ms (x%.2f)   packed-serial %7.3f ms"
        "   float==packed %s   omp==serial %s\n",
        c, hw, hw, t_float, t_packed, t_float / t_packed, t_packed_ser, eq_fp ? "yes" : "NO",
        eq_ps ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
    const bool smoke = argc > 1 && std::string(argv[1]) == "--smoke";
    const int reps = smoke ? 2 : 7;

    std::printf("== conv2d: OpenMP vs serial reference ==\n");
    if (smoke) {
        bench_conv(4, 12, reps);
    } else {
        bench_conv(8, 28, reps);
        bench_conv(16, 28, reps);
        bench_conv(32, 14, reps);
    }

    std::printf("\n== binary convolution: float vs packed ==\n");
    if (smoke) {
        bench_binary_conv(4, 12, reps);
    } else {
        bench_binary_conv(16, 28, reps);
        bench_binary_conv(32, 14, reps);
        bench_binary_conv(64, 7, reps);
    }

    std::printf("\n== dot product: packed XNOR/popcount vs float ==\n");
    std::printf("%-8s %14s %14s %10s\n", "M", "packed_ns", "float_ns", "speedup");
    for (std::size_t m : smoke ? std::vector<std::size_t>{64, 256}
                                : std::vector<std::size_t>{64, 1024, 4096, 16384}) {
        const DotBenchResult r = bench_dot(m, smoke ? 3 : 9);
        std::printf("%-8zu %14.1f %14.1f %9.2fx %s\n", m, r.packed_ns, r.float_ns, r.speedup,
                    r.results_agree ? "" : "  RESULTS DISAGREE");
    }
    return 0;
}
