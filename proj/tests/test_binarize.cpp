#include <doctest.h>

#include <cmath>
#include <cstring>

#include "rebnn/binarize.hpp"
#include "rebnn/bitkernel.hpp"
#include "test_util.hpp"

using namespace rebnn;
using namespace rebnn::test;

namespace {

BinaryLayerT<double> make_layer(const DTensor& latent) {
    BinaryLayerT<double> layer;
    layer.latent_weight = latent;
    const std::size_t c = latent.shape[0];
    layer.alpha.resize(c);
    for (std::size_t i = 0; i < c; ++i)
        layer.alpha[i] = std::max(cam_scale(layer.channel(i), layer.fan_in()), 1e-8);
    layer.gamma.assign(c, 0.0);
    return layer;
}

}  // namespace

TEST_SUITE_BEGIN("binarize");

TEST_CASE("sign_binarize: sign definition with sign(0) = +1") {
    DTensor x({3}, {0.3, -0.2, 0.0});
    const DTensor s = sign_binarize(x);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == -1.0);
    CHECK(s[2] == 1.0);

    DTensor neg({4}, {-0.1, -5.0, -0.0001, -1.0});
    for (double v : sign_binarize(neg).data) CHECK(v == -1.0);

    // idempotence
    const DTensor ss = sign_binarize(s);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(ss[i] == s[i]);
}

TEST_CASE("cam_scale: direct formula and degenerate input") {
    DTensor w({4}, {0.5, -1.5, 1.0, -1.0});
    CHECK(cam_scale(w) == doctest::Approx(1.0));
    DTensor zeros({3});
    CHECK(cam_scale(zeros) == 0.0);
    CHECK_THROWS_AS(cam_scale<double>(nullptr, 0), DimensionError);
}

TEST_CASE("cam_scale is scale-equivariant") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const DTensor w = random_dtensor({9}, rng, -2.0, 2.0);
        const double c = rng.uniform(-3.0, 3.0);
        DTensor cw = w;
        for (double& v : cw.data) v *= c;
        CHECK(rel_close(cam_scale(cw), std::abs(c) * cam_scale(w), 1e-12));
    }
    DTensor sym({4}, {0.7, -0.7, 0.7, -0.7});
    CHECK(cam_scale(sym) == doctest::Approx(0.7));
}

TEST_CASE("binary_conv_forward: scalar case and antisymmetry") {
    BinaryLayerT<double> layer = make_layer(DTensor({1, 1, 1, 1}, {0.7}));
    CHECK(layer.alpha[0] == doctest::Approx(0.7));
    DTensor x({1, 1, 1}, {2.0});
    const DTensor out = binary_conv_forward(x, layer, 1, 0);
    CHECK(out[0] == doctest::Approx(0.7));  // sign*sign = +1, then alpha

    // negating the input flips the output sign exactly (no padding involved)
    Rng rng(12);
    const DTensor latent = random_latent({3, 2, 3, 3}, rng);
    BinaryLayerT<double> l2 = make_layer(latent);
    DTensor xin = random_latent({2, 6, 6}, rng);
    const DTensor a = binary_conv_forward(xin, l2, 1, 0);
    for (double& v : xin.data) v = -v;
    const DTensor b = binary_conv_forward(xin, l2, 1, 0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == -b[i]);
}

TEST_CASE("binary_conv_forward equals the packed path exactly") {
    Rng rng(13);
    const DTensor latent = random_latent({2, 4, 3, 3}, rng);
    BinaryLayerT<double> layer = make_layer(latent);
    const DTensor x = random_dtensor({4, 5, 5}, rng);
    const DTensor f = binary_conv_forward(x, layer, 1, 1);
    const DTensor p = binary_conv_packed(x, layer, 1, 1);
    REQUIRE(f.shape == p.shape);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == p[i]);
}

TEST_CASE("binary conv output magnitudes have the parity of the fan-in") {
    Rng rng(14);
    const DTensor latent = random_latent({3, 3, 3, 3}, rng);
    BinaryLayerT<double> layer = make_layer(latent);
    const std::size_t m = layer.fan_in();
    const DTensor x = random_dtensor({3, 6, 6}, rng);
    const DTensor out = binary_conv_forward(x, layer, 1, 1);
    const std::size_t plane = out.shape[1] * out.shape[2];
    for (std::size_t oc = 0; oc < out.shape[0]; ++oc)
        for (std::size_t i = 0; i < plane; ++i) {
            const double s = out.data[oc * plane + i] / layer.alpha[oc];
            const long long si = std::llround(s);
            CHECK(std::abs(s - static_cast<double>(si)) < 1e-9);
            CHECK(std::abs(si) <= static_cast<long long>(m));
            CHECK((si - static_cast<long long>(m)) % 2 == 0);
        }
}

TEST_CASE("ste_weight_grad: gate and linearity") {
    DTensor up({2}, {0.1, -0.4});
    DTensor w({2}, {0.5, 1.2});
    const DTensor g = ste_weight_grad(up, 2.0, w);
    CHECK(g[0] == doctest::Approx(0.2));
    CHECK(g[1] == 0.0);  // gate kills |w| > 1

    DTensor w_sat({2}, {1.5, -2.0});
    const DTensor g_sat = ste_weight_grad(up, 2.0, w_sat);
    CHECK(g_sat[0] == 0.0);
    CHECK(g_sat[1] == 0.0);

    DTensor w_in({2}, {0.5, -0.5});
    const DTensor g_id = ste_weight_grad(up, 1.0, w_in);
    CHECK(g_id[0] == up[0]);
    CHECK(g_id[1] == up[1]);

    // linear in upstream and in alpha
    Rng rng(15);
    const DTensor u1 = random_dtensor({8}, rng);
    const DTensor u2 = random_dtensor({8}, rng);
    const DTensor wl = random_latent({8}, rng);
    DTensor u_sum(u1.shape);
    for (std::size_t i = 0; i < 8; ++i) u_sum[i] = u1[i] + 2.0 * u2[i];
    const DTensor lhs = ste_weight_grad(u_sum, 1.5, wl);
    const DTensor a1 = ste_weight_grad(u1, 1.5, wl);
    const DTensor a2 = ste_weight_grad(u2, 1.5, wl);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(rel_close(lhs[i], a1[i] + 2.0 * a2[i], 1e-12));
    const DTensor half = ste_weight_grad(u1, 0.75, wl);
    for (std::size_t i = 0; i < 8; ++i) CHECK(rel_close(2.0 * half[i], a1[i], 1e-12));
}

TEST_CASE("activation_ste_backward: clip gate and hardtanh surrogate") {
    DTensor up({1}, {1.0});
    CHECK(activation_ste_backward(up, DTensor({1}, {0.5}))[0] == 1.0);
    CHECK(activation_ste_backward(up, DTensor({1}, {1.5}))[0] == 0.0);

    // gate equals the finite difference of the hardtanh surrogate
    Rng rng(16);
    DTensor a = random_dtensor({12}, rng, -2.0, 2.0);
    for (double& v : a.data)  // keep away from the +/-1 kink where FD is ill-defined
        if (std::abs(std::abs(v) - 1.0) < 1e-3) v += 0.01;
    const DTensor r = random_dtensor({12}, rng);
    const auto loss = [&] {
        const DTensor h = hardtanh_forward(a);
        double acc = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) acc += r[i] * h[i];
        return acc;
    };
    const DTensor fd = finite_difference(a, loss, 1e-6);
    const DTensor g = activation_ste_backward(r, a);
    CHECK(max_rel_err(g, fd) < 1e-6);
}

TEST_CASE("sign-conv weight gradient matches finite differences of the +1-padded forward") {
    // the forward map is linear in the (effective) weights, so central
    // differences are exact up to rounding even though inputs are signs
    Rng rng(17);
    const DTensor sx = sign_binarize(random_dtensor({2, 5, 5}, rng));
    DTensor w = random_dtensor({3, 2, 3, 3}, rng);
    const int stride = 2, pad = 1;
    const DTensor r = random_dtensor(sign_conv_raw(sx, w, stride, pad).shape, rng);
    const auto loss = [&] {
        const DTensor out = sign_conv_raw(sx, w, stride, pad);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += r[i] * out[i];
        return acc;
    };
    const DTensor g = sign_conv_weight_grad(sx, r, w.shape, stride, pad);
    const DTensor fd = finite_difference(w, loss, 1e-5);
    CHECK(max_rel_err(g, fd) < 1e-6);
}

TEST_CASE("binary conv zero-padding contributes sign(0) = +1 on both paths") {
    // all-ones weights: zero-padded border positions must still see +1 inputs
    DTensor latent({1, 1, 3, 3}, std::vector<double>(9, 0.4));
    BinaryLayerT<double> layer = make_layer(latent);
    DTensor x({1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
    const DTensor f = binary_conv_forward(x, layer, 1, 1);
    const DTensor p = binary_conv_packed(x, layer, 1, 1);
    for (std::size_t i = 0; i < f.size(); ++i) {
        // every window sums 9 terms of +1 * +1
        CHECK(f[i] == doctest::Approx(0.4 * 9));
        CHECK(f[i] == p[i]);
    }
}

TEST_SUITE_END();
