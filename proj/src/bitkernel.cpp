#include "rebnn/bitkernel.hpp"

#include <algorithm>
#include <chrono>

#include "rebnn/rng.hpp"

namespace rebnn {

namespace {

double median(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DotBenchResult bench_dot(std::size_t m, std::size_t repetitions, std::uint64_t seed) {
    // several row pairs so a single pair cannot sit entirely in registers
    constexpr std::size_t kPairs = 64;
    Rng rng(seed);
    TensorT<float> a({kPairs, m}), b({kPairs, m});
    for (float& v : a.data) v = rng.next_u64() & 1 ? 1.0f : -1.0f;
    for (float& v : b.data) v = rng.next_u64() & 1 ? 1.0f : -1.0f;
    const PackedBitTensor pa = pack(a, 1), pb = pack(b, 1);

    // correctness before timing: both paths must produce identical sums
    std::vector<long long> expected(kPairs);
    bool agree = true;
    for (std::size_t r = 0; r < kPairs; ++r) {
        double acc = 0.0;
        const float* pa_f = a.data.data() + r * m;
        const float* pb_f = b.data.data() + r * m;
        for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(pa_f[j]) * pb_f[j];
        expected[r] = static_cast<long long>(acc);
        if (xnor_popcount_dot(packed_row(pa, r), packed_row(pb, r)) != expected[r]) agree = false;
    }

    using clock = std::chrono::steady_clock;
    volatile long long sink_i = 0;
    volatile float sink_f = 0.0f;

    std::vector<double> packed_times, float_times;
    const std::size_t reps = std::max<std::size_t>(repetitions, 3);
    for (std::size_t rep = 0; rep < reps + 1; ++rep) {  // first pass is warmup
        const auto t0 = clock::now();
        long long acc_i = 0;
        for (std::size_t r = 0; r < kPairs; ++r)
            acc_i += xnor_popcount_dot(packed_row(pa, r), packed_row(pb, r));
        const auto t1 = clock::now();
        float acc_f = 0.0f;
        for (std::size_t r = 0; r < kPairs; ++r) {
            const float* pa_f = a.data.data() + r * m;
            const float* pb_f = b.data.data() + r * m;
            float acc = 0.0f;
            for (std::size_t j = 0; j < m; ++j) acc += pa_f[j] * pb_f[j];
            acc_f += acc;
        }
        const auto t2 = clock::now();
        sink_i = sink_i + acc_i;
        sink_f = sink_f + acc_f;
        if (rep == 0) continue;
        packed_times.push_back(
            std::chrono::duration<double, std::nano>(t1 - t0).count() / kPairs);
        float_times.push_back(std::chrono::duration<double, std::nano>(t2 - t1).count() / kPairs);
    }

    DotBenchResult res;
    res.results_agree = agree;
    res.packed_ns = median(packed_times);
    res.float_ns = median(float_times);
    res.speedup = res.packed_ns > 0.0 ? res.float_ns / res.packed_ns : 0.0;
    return res;
}

}  // namespace rebnn
