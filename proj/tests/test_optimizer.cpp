#include <doctest.h>

#include <cmath>

#include "rebnn/optimizer.hpp"
#include "test_util.hpp"

using namespace rebnn;
using namespace rebnn::test;

namespace {

BinaryLayerT<double> layer_from(const DTensor& latent, std::vector<double> alpha,
                                std::vector<double> gamma) {
    BinaryLayerT<double> layer;
    layer.latent_weight = latent;
    layer.alpha = std::move(alpha);
    layer.gamma = std::move(gamma);
    return layer;
}

}  // namespace

TEST_SUITE_BEGIN("optimizer");

TEST_CASE("reconstruction_loss: exact reconstruction, direct value, linearity in gamma") {
    auto exact = layer_from(DTensor({1, 1, 1, 2}, {1.0, -1.0}), {1.0}, {0.1});
    CHECK(reconstruction_loss(exact) == doctest::Approx(0.0));

    auto half = layer_from(DTensor({1, 1, 1, 1}, {0.5}), {1.0}, {0.2});
    CHECK(reconstruction_loss(half) == doctest::Approx(0.025));

    Rng rng(21);
    auto l1 = layer_from(random_latent({2, 1, 2, 2}, rng), {0.6, 0.8}, {1e-4, 2e-4});
    auto l2 = l1;
    for (double& g : l2.gamma) g *= 2.0;
    CHECK(rel_close(reconstruction_loss(l2), 2.0 * reconstruction_loss(l1), 1e-12));
}

TEST_CASE("resilient_grad: the two algebraic forms agree") {
    // hand value: gamma=0.1, w=0.5, alpha=1, b=+1, upstream=0.2 -> 0.15
    auto layer = layer_from(DTensor({1, 1, 1, 1}, {0.5}), {1.0}, {0.1});
    const DTensor up_chan({1, 1, 1, 1}, {0.2});
    const DTensor d = resilient_grad(up_chan, layer, 0);
    CHECK(d[0] == doctest::Approx(0.15));

    // random instances: alpha*(g gated - gamma b) + gamma w  ==  ste + gamma (w - alpha b)
    Rng rng(22);
    for (int t = 0; t < 200; ++t) {
        const double w = rng.uniform(-1.5, 1.5);
        const double alpha = rng.uniform(0.1, 2.0);
        const double gamma = rng.uniform(1e-6, 1e-2);
        const double g = rng.uniform(-1.0, 1.0);
        auto l = layer_from(DTensor({1, 1, 1, 1}, {w}), {alpha}, {gamma});
        DTensor upv({1, 1, 1}, {g});
        const double form_b = resilient_grad(upv, l, 0)[0];
        const double b = w < 0 ? -1.0 : 1.0;
        const double gate = std::abs(w) <= 1.0 ? g : 0.0;
        const double form_a = alpha * gate + gamma * (w - alpha * b);
        CHECK(rel_close(form_a, form_b, 1e-12));
    }
}

TEST_CASE("resilient_grad degenerates to the STE gradient at gamma = 0, bitwise") {
    Rng rng(23);
    for (int t = 0; t < 50; ++t) {
        const DTensor w = random_dtensor({1, 1, 2, 2}, rng, -1.5, 1.5);
        auto l = layer_from(w, {rng.uniform(0.1, 2.0)}, {0.0});
        const DTensor up = random_dtensor({1, 1, 2, 2}, rng);
        const DTensor a = resilient_grad(up, l, 0);
        const DTensor b = ste_weight_grad(up, l.alpha[0], w);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("resilient_grad is zero at the fixed point w = alpha * b, upstream = 0") {
    auto l = layer_from(DTensor({1, 1, 1, 2}, {0.7, -0.7}), {0.7}, {0.3});
    const DTensor up({1, 1, 1, 2}, {0.0, 0.0});
    const DTensor d = resilient_grad(up, l, 0);
    CHECK(d[0] == doctest::Approx(0.0));
    CHECK(d[1] == doctest::Approx(0.0));
}

TEST_CASE("plain step on the resilient gradient matches the closed-form update") {
    // eta=0.1, gamma=0.2, w=0.5, alpha=1, upstream=0.3, b=+1 -> w' = 0.48
    auto l = layer_from(DTensor({1, 1, 1, 1}, {0.5}), {1.0}, {0.2});
    DTensor up({1, 1, 1, 1}, {0.3});
    const DTensor d = resilient_grad(up, l, 0);
    const double w_next = 0.5 - 0.1 * d[0];
    CHECK(w_next == doctest::Approx(0.48));
    CHECK(rel_close(w_next, 0.98 * 0.5 - 0.1 * (0.3 - 0.2), 1e-12));

    // random cases: (1 - eta gamma) w - eta alpha (g_gated - gamma b)
    Rng rng(24);
    for (int t = 0; t < 1200; ++t) {
        const double w = rng.uniform(-1.5, 1.5);
        const double alpha = rng.uniform(0.05, 2.0);
        const double gamma = rng.uniform(1e-6, 1e-2);
        const double g = rng.uniform(-1.0, 1.0);
        const double eta = rng.uniform(1e-3, 0.5);
        auto li = layer_from(DTensor({1, 1, 1, 1}, {w}), {alpha}, {gamma});
        DTensor upv({1, 1, 1, 1}, {g});
        const double stepped = w - eta * resilient_grad(upv, li, 0)[0];
        const double b = w < 0 ? -1.0 : 1.0;
        const double gate = std::abs(w) <= 1.0 ? g : 0.0;
        const double closed = (1.0 - eta * gamma) * w - eta * alpha * (gate - gamma * b);
        CHECK(rel_close(stepped, closed, 1e-12));
    }
}

TEST_CASE("sgd_step: zero gradient and zero momentum leave parameters unchanged") {
    auto l = layer_from(DTensor({1, 1, 1, 2}, {0.4, -0.6}), {0.5}, {0.0});
    BinarySgdState<double> state;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    const DTensor zero_grad({1, 1, 1, 2});
    sgd_step(l, state, zero_grad, std::vector<double>{0.0}, 0.1, cfg);
    CHECK(l.latent_weight[0] == 0.4);
    CHECK(l.latent_weight[1] == -0.6);
    CHECK(l.alpha[0] == 0.5);
}

TEST_CASE("learning-rate schedules hit their endpoints") {
    TrainConfig cfg;
    cfg.eta = 0.1;
    cfg.epochs = 20;
    cfg.schedule = LrSchedule::cosine;
    CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(0.1));
    CHECK(std::abs(lr_at_epoch(cfg, 19)) < 1e-9);
    cfg.schedule = LrSchedule::linear;
    CHECK(std::abs(lr_at_epoch(cfg, 19)) < 1e-9);
    cfg.schedule = LrSchedule::constant;
    CHECK(lr_at_epoch(cfg, 19) == doctest::Approx(0.1));
}

TEST_CASE("gamma_update: hand cases and the section bounds") {
    TrainConfig cfg;  // gamma_min 1e-5, gamma_max 2e-4
    // signs t = [+,-,+,+], t+1 = [+,+,+,+]: one flip in four, max|g| = 0.08
    const PackedBitTensor t0 = pack(DTensor({4}, {1, -1, 1, 1}));
    const PackedBitTensor t1 = pack(DTensor({4}, {1, 1, 1, 1}));
    const double raw = (1.0 / 4.0) * 0.08;
    CHECK(raw == doctest::Approx(0.02));
    CHECK(gamma_update(packed_row(t0, 0), packed_row(t1, 0), 0.08, cfg.gamma_min, cfg.gamma_max) ==
          doctest::Approx(2e-4));

    // no flips -> lower bound
    CHECK(gamma_update(packed_row(t1, 0), packed_row(t1, 0), 0.08, cfg.gamma_min, cfg.gamma_max) ==
          doctest::Approx(1e-5));

    // all flips with max|g| = 1e-4 stays unclamped
    const PackedBitTensor neg = pack(DTensor({4}, {-1, -1, -1, -1}));
    CHECK(gamma_update(packed_row(t1, 0), packed_row(neg, 0), 1e-4, cfg.gamma_min, cfg.gamma_max) ==
          doctest::Approx(1e-4));
}

TEST_CASE("gamma_update stays in bounds and is monotone before clamping") {
    Rng rng(25);
    for (int t = 0; t < 300; ++t) {
        const std::size_t m = 1 + rng.next_below(100);
        DTensor a({m}), b({m});
        for (std::size_t i = 0; i < m; ++i) {
            a[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
            b[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
        }
        const PackedBitTensor pa = pack(a), pb = pack(b);
        const double g = rng.uniform(0.0, 1.0);
        const double out = gamma_update(packed_row(pa, 0), packed_row(pb, 0), g, 1e-5, 2e-4);
        CHECK(out >= 1e-5);
        CHECK(out <= 2e-4);
    }
    // monotone nondecreasing in flip count and in the gradient magnitude
    const PackedBitTensor base = pack(DTensor({8}, {1, 1, 1, 1, 1, 1, 1, 1}));
    DTensor flip1v({8}, {-1, 1, 1, 1, 1, 1, 1, 1});
    DTensor flip4v({8}, {-1, -1, -1, -1, 1, 1, 1, 1});
    const PackedBitTensor f1 = pack(flip1v), f4 = pack(flip4v);
    const double lo = 0.0, hi = 1.0;  // unclamped comparison
    const double r1 = gamma_update(packed_row(base, 0), packed_row(f1, 0), 1e-4, lo, hi);
    const double r4 = gamma_update(packed_row(base, 0), packed_row(f4, 0), 1e-4, lo, hi);
    CHECK(r1 <= r4);
    const double s1 = gamma_update(packed_row(base, 0), packed_row(f4, 0), 1e-4, lo, hi);
    const double s2 = gamma_update(packed_row(base, 0), packed_row(f4, 0), 2e-4, lo, hi);
    CHECK(s1 <= s2);
}

TEST_CASE("alpha_grad: hand value, CAM stationary point, gamma = 0 passthrough") {
    // gamma=0.1, w=[0.5,-0.8], alpha=0.6, b=[+1,-1], task 0 -> -0.01
    auto l = layer_from(DTensor({1, 1, 1, 2}, {0.5, -0.8}), {0.6}, {0.1});
    CHECK(alpha_grad(l, 0, 0.0) == doctest::Approx(-0.01));

    // alpha = CAM and b = sign(w) zero the reconstruction term
    Rng rng(26);
    DTensor w = random_latent({1, 1, 2, 3}, rng);
    auto l2 = layer_from(w, {cam_scale(w.data.data(), w.size())}, {0.3});
    CHECK(std::abs(alpha_grad(l2, 0, 0.0)) < 1e-12);

    auto l3 = layer_from(w, {0.4}, {0.0});
    CHECK(alpha_grad(l3, 0, 0.123) == 0.123);
}

TEST_CASE("reconstruction gradients match finite differences of the loss") {
    Rng rng(27);
    for (int t = 0; t < 10; ++t) {
        auto layer = layer_from(random_latent({2, 1, 2, 2}, rng),
                                {rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)},
                                {rng.uniform(1e-5, 1e-3), rng.uniform(1e-5, 1e-3)});
        // d L_R / d w = gamma (w - alpha b), holding sign(w) fixed over the step
        const auto loss = [&] { return reconstruction_loss(layer); };
        const DTensor fd_w = finite_difference(layer.latent_weight, loss, 1e-6);
        const std::size_t m = layer.fan_in();
        for (std::size_t i = 0; i < layer.out_channels(); ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double w = layer.latent_weight[i * m + j];
                const double b = w < 0 ? -1.0 : 1.0;
                const double analytic = layer.gamma[i] * (w - layer.alpha[i] * b);
                CHECK(rel_close(analytic, fd_w[i * m + j], 1e-6, 1e-10));
            }
        // d L_R / d alpha via alpha_grad
        for (std::size_t i = 0; i < layer.out_channels(); ++i) {
            const double orig = layer.alpha[i];
            const double h = 1e-6;
            layer.alpha[i] = orig + h;
            const double plus = reconstruction_loss(layer);
            layer.alpha[i] = orig - h;
            const double minus = reconstruction_loss(layer);
            layer.alpha[i] = orig;
            const double fd = (plus - minus) / (2.0 * h);
            CHECK(rel_close(alpha_grad(layer, i, 0.0), fd, 1e-6, 1e-10));
        }
    }
}

TEST_CASE("detect_oscillation: footnote definition and ratio ordering") {
    // one position with history [-1, +1, -1]: counts as sequential
    const PackedBitTensor a = pack(DTensor({1, 3}, {-1, 1, 1}), 1);
    const PackedBitTensor b = pack(DTensor({1, 3}, {1, 1, 1}), 1);
    const PackedBitTensor c = pack(DTensor({1, 3}, {-1, 1, 1}), 1);
    const OscillationRecord rec = detect_oscillation(a, b, c);
    CHECK(rec.flip_proportion == doctest::Approx(1.0 / 3.0));
    CHECK(rec.sequential_ratio == doctest::Approx(1.0 / 3.0));

    // history [-1, +1, +1]: flip at the first step only, not sequential
    const OscillationRecord rec2 = detect_oscillation(a, b, b);
    CHECK(rec2.flip_proportion == 0.0);
    CHECK(rec2.sequential_ratio == 0.0);

    // constant signs
    const OscillationRecord rec3 = detect_oscillation(b, b, b);
    CHECK(rec3.flip_proportion == 0.0);
    CHECK(rec3.sequential_ratio == 0.0);

    // sequential_ratio <= flip_proportion on random histories
    Rng rng(28);
    for (int t = 0; t < 100; ++t) {
        DTensor s0({1, 64}), s1({1, 64}), s2({1, 64});
        for (std::size_t i = 0; i < 64; ++i) {
            s0[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
            s1[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
            s2[i] = rng.next_u64() & 1 ? 1.0 : -1.0;
        }
        const OscillationRecord r =
            detect_oscillation(pack(s0, 1), pack(s1, 1), pack(s2, 1));
        CHECK(r.sequential_ratio <= r.flip_proportion);
    }

    const PackedBitTensor wrong = pack(DTensor({1, 5}, {1, 1, 1, 1, 1}), 1);
    CHECK_THROWS_AS(detect_oscillation(a, b, wrong), DimensionError);
}

TEST_SUITE_END();
