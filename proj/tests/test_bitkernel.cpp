#include <doctest.h>

#include <cstring>

#include "rebnn/bitkernel.hpp"
#include "test_util.hpp"

using namespace rebnn;
using namespace rebnn::test;

TEST_SUITE_BEGIN("bitkernel");

TEST_CASE("pack encoding: bit0 = +1, low nibble 0b0101") {
    const PackedBitTensor p = pack(DTensor({4}, {1, -1, 1, -1}));
    CHECK(p.rows == 1);
    CHECK(p.valid_len == 4);
    CHECK(p.words_per_row == 1);
    CHECK((p.words[0] & 0xFULL) == 0b0101ULL);
    // pad bits are forced to the +1 encoding
    CHECK((p.words[0] >> 4) == (~0ULL >> 4));

    const PackedBitTensor ones = pack(DTensor({64}, std::vector<double>(64, 1.0)));
    CHECK(ones.words[0] == ~0ULL);

    CHECK_THROWS_AS(pack(DTensor({2}, {1.0, 0.5})), std::domain_error);
}

TEST_CASE("pack/unpack round-trip on random sign vectors") {
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
        const std::size_t rows = 1 + rng.next_below(4);
        const std::size_t m = 1 + rng.next_below(200);
        DTensor signs({rows, m});
        for (double& v : signs.data) v = rng.next_u64() & 1 ? 1.0 : -1.0;
        const DTensor back = unpack<double>(pack(signs, 1));
        REQUIRE(back.shape == signs.shape);
        for (std::size_t i = 0; i < signs.size(); ++i) CHECK(back[i] == signs[i]);
    }
}

TEST_CASE("xnor_popcount_dot: hand cases") {
    const PackedBitTensor a = pack(DTensor({4}, {1, -1, 1, -1}));
    const PackedBitTensor b = pack(DTensor({4}, {1, 1, -1, -1}));
    CHECK(xnor_popcount_dot(packed_row(a, 0), packed_row(b, 0)) == 0);
    CHECK(xnor_popcount_dot(packed_row(a, 0), packed_row(a, 0)) == 4);  // x . x = M

    const PackedBitTensor len5 = pack(DTensor({5}, {1, 1, 1, 1, 1}));
    CHECK_THROWS_AS(xnor_popcount_dot(packed_row(a, 0), packed_row(len5, 0)), DimensionError);
}

TEST_CASE("xnor_popcount_dot matches the float reference and stays in range") {
    Rng rng(32);
    for (int t = 0; t < 100; ++t) {
        const std::size_t m = 1 + rng.next_below(300);  // frequently not a multiple of 64
        DTensor av({m}), bv({m});
        for (std::size_t i = 0; i < m; ++i) {
            av[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
            bv[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
        }
        double ref = 0.0;
        for (std::size_t i = 0; i < m; ++i) ref += av[i] * bv[i];
        const long long dot =
            xnor_popcount_dot(packed_row(pack(av), 0), packed_row(pack(bv), 0));
        CHECK(static_cast<double>(dot) == ref);
        CHECK(std::abs(dot) <= static_cast<long long>(m));
        CHECK((dot - static_cast<long long>(m)) % 2 == 0);  // parity of M
    }
}

TEST_CASE("packed convolution: all +1 weights and inputs give alpha * M everywhere") {
    BinaryLayerT<double> layer;
    layer.latent_weight = DTensor({2, 3, 3, 3}, std::vector<double>(54, 1.0));
    layer.alpha = {0.5, 2.0};
    layer.gamma = {0.0, 0.0};
    const DTensor x({3, 4, 4}, std::vector<double>(48, 1.0));
    const DTensor out = binary_conv_packed(x, layer, 1, 1);
    const double m = 27.0;
    const std::size_t plane = out.shape[1] * out.shape[2];
    for (std::size_t i = 0; i < plane; ++i) {
        CHECK(out.data[i] == 0.5 * m);
        CHECK(out.data[plane + i] == 2.0 * m);
    }
}

TEST_CASE("ops accounting: hand count for a 64x64x3x3 layer on 32x32 input") {
    const OpsReport r = binary_conv_ops(64, 64, 3, 32, 32);
    CHECK(r.bops == 64ULL * 64 * 9 * 2 * 32 * 32);
    CHECK(r.flops == 64ULL * 32 * 32);

    // all-real model has zero bops and ratio 1
    OpsReport real = real_conv_ops(16, 8, 3, 10, 10);
    real += linear_ops(10, 100);
    CHECK(real.bops == 0);
    CHECK(real.compression_ratio() == doctest::Approx(1.0));
}

TEST_CASE("binary layer storage approaches 32x compression for large fan-in") {
    // ceil(M/64)*8*C_out + 4*C_out bytes packed vs 4*M*C_out float
    const OpsReport r = binary_conv_ops(256, 256, 3, 1, 1);
    CHECK(r.model_bytes_binary == ((2304 + 63) / 64) * 8 * 256 + 4 * 256);
    CHECK(r.model_bytes_float == 2304ULL * 256 * 4);
    CHECK(r.compression_ratio() > 30.0);
    CHECK(r.compression_ratio() < 32.0);
}

TEST_CASE("bench_dot smoke: M = 64 runs and the paths agree") {
    const DotBenchResult r = bench_dot(64, 3);
    CHECK(r.results_agree);
    CHECK(r.packed_ns > 0.0);
    CHECK(r.float_ns > 0.0);
}

TEST_CASE("packed kernel OpenMP path equals its serial reference bitwise") {
    Rng rng(33);
    BinaryLayerT<float> layer;
    layer.latent_weight = random_dtensor({5, 3, 3, 3}, rng).cast<float>();
    layer.alpha = {0.3f, 0.7f, 1.1f, 0.2f, 0.9f};
    layer.gamma.assign(5, 0.0f);
    const TensorT<float> x = sign_binarize(random_dtensor({3, 7, 6}, rng).cast<float>());
    const PackedBitTensor pw = pack_weight_signs(layer);
    const TensorT<float> a = binary_conv_packed(x, pw, layer.alpha, 3, 2, 1);
    const TensorT<float> b = serial::binary_conv_packed(x, pw, layer.alpha, 3, 2, 1);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0);
}

TEST_SUITE_END();
