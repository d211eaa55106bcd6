#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rebnn/binarize.hpp"
#include "rebnn/bitpack.hpp"
#include "rebnn/tensor.hpp"

// The resilient training rule: a weighted reconstruction loss pulls latent
// weights toward alpha * sign(w); its per-channel balanced parameter gamma
// acts as the threshold a task gradient must beat to flip a sign, and is
// re-estimated every iteration from the sign-flip proportion and the largest
// intra-channel gradient magnitude.

namespace rebnn {

enum class GammaMode { adaptive, constant, max_grad_only, off };
enum class LrSchedule { cosine, constant, linear };

struct TrainConfig {
    double eta = 0.1;  // base learning rate
    double momentum = 0.9;
    double weight_decay = 1e-4;  // real-valued parameters only
    int epochs = 1;
    int batch_size = 50;
    LrSchedule schedule = LrSchedule::cosine;
    double gamma_min = 1e-5;
    double gamma_max = 2e-4;
    double gamma_init = 1e-4;
    GammaMode gamma_mode = GammaMode::adaptive;
    double gamma_constant = 1e-4;  // used when gamma_mode == constant
    std::uint64_t seed = 1;
    bool eval_each_epoch = false;
    int histogram_every = 1;  // epochs between latent-weight histogram snapshots

    void validate() const {
        if (eta <= 0) throw std::invalid_argument("config: eta must be > 0");
        if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (weight_decay < 0) throw std::invalid_argument("config: weight_decay must be >= 0");
        if (!(gamma_min <= gamma_init && gamma_init <= gamma_max))
            throw std::invalid_argument("config: need gamma_min <= gamma_init <= gamma_max");
    }
};

// Learning rate for an epoch. Cosine and linear both anneal to 0 at the final
// epoch; a single-epoch run trains at the base rate.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (cfg.schedule == LrSchedule::constant || cfg.epochs <= 1) return cfg.eta;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    if (cfg.schedule == LrSchedule::linear) return cfg.eta * (1.0 - t);
    return 0.5 * cfg.eta * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Per-layer, per-iteration sign-flip statistics.
struct OscillationRecord {
    std::size_t layer_id = 0;
    long long iteration = 0;
    double flip_proportion = 0.0;   // signs changed over the last step
    double sequential_ratio = 0.0;  // flipped on both of the last two steps
    std::vector<float> max_grad_mag;  // per output channel, from d(loss)/d(w_hat)
    // raw counts so epoch aggregates stay exact
    std::uint64_t flip_count = 0;
    std::uint64_t sequential_count = 0;
    std::uint64_t weight_count = 0;
};

// Flip statistics from three consecutive packed sign snapshots. A sequential
// oscillation at a position means its sign flipped at both steps
// (-1 -> +1 -> -1 or +1 -> -1 -> +1).
inline OscillationRecord detect_oscillation(const PackedBitTensor& prev_prev,
                                            const PackedBitTensor& prev,
                                            const PackedBitTensor& curr) {
    if (prev_prev.logical_shape != prev.logical_shape ||
        prev.logical_shape != curr.logical_shape)
        throw DimensionError("detect_oscillation: snapshot shape mismatch");
    OscillationRecord rec;
    rec.weight_count = prev.rows * prev.valid_len;
    std::uint64_t flips = 0, seq = 0;
    for (std::size_t k = 0; k < prev.words.size(); ++k) {
        const std::uint64_t step1 = prev_prev.words[k] ^ prev.words[k];
        const std::uint64_t step2 = prev.words[k] ^ curr.words[k];
        flips += std::popcount(step2);
        seq += std::popcount(step1 & step2);
    }
    rec.flip_count = flips;
    rec.sequential_count = seq;
    rec.flip_proportion = static_cast<double>(flips) / static_cast<double>(rec.weight_count);
    rec.sequential_ratio = static_cast<double>(seq) / static_cast<double>(rec.weight_count);
    return rec;
}

// ---------------------------------------------------------------------------
// Reconstruction loss and its gradients
// ---------------------------------------------------------------------------

// 1/2 * sum_i gamma_i * ||w_i - alpha_i * sign(w_i)||^2 for one layer.
template <typename T>
double reconstruction_loss(const BinaryLayerT<T>& layer) {
    const std::size_t m = layer.fan_in();
    double total = 0.0;
    for (std::size_t i = 0; i < layer.out_channels(); ++i) {
        const T* w = layer.channel(i);
        const double a = static_cast<double>(layer.alpha[i]);
        double sq = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = static_cast<double>(w[j]) -
                             a * static_cast<double>(sign_value(w[j]));
            sq += d * d;
        }
        total += 0.5 * static_cast<double>(layer.gamma[i]) * sq;
    }
    return total;
}

namespace detail {

// delta = alpha * (g gated by 1_{|w|<=1} - gamma * sign(w)) + gamma * w.
// gamma == 0 falls back to the plain straight-through gradient so the
// baseline path is reproduced bit for bit.
template <typename T>
inline void resilient_grad_span(const T* upstream, const T* w, T alpha, T gamma, T* out,
                                std::size_t m) {
    if (gamma == T(0)) {
        for (std::size_t j = 0; j < m; ++j)
            out[j] = std::abs(w[j]) <= T(1) ? alpha * upstream[j] : T(0);
        return;
    }
    for (std::size_t j = 0; j < m; ++j) {
        const T gated = std::abs(w[j]) <= T(1) ? upstream[j] : T(0);
        out[j] = alpha * (gated - gamma * sign_value(w[j])) + gamma * w[j];
    }
}

}  // namespace detail

// Resilient gradient for one output channel. `upstream` is d(loss)/d(w_hat)
// restricted to channel i.
template <typename T>
TensorT<T> resilient_grad(const TensorT<T>& upstream, const BinaryLayerT<T>& layer,
                          std::size_t channel) {
    const std::size_t m = layer.fan_in();
    if (upstream.size() != m)
        throw DimensionError("resilient_grad: upstream size " + std::to_string(upstream.size()) +
                             " vs fan-in " + std::to_string(m));
    TensorT<T> out(upstream.shape);
    detail::resilient_grad_span(upstream.data.data(), layer.channel(channel),
                                layer.alpha[channel], layer.gamma[channel], out.data.data(), m);
    return out;
}

// Whole-layer resilient gradient from d(loss)/d(w_hat).
template <typename T>
TensorT<T> resilient_grad_all(const TensorT<T>& upstream, const BinaryLayerT<T>& layer) {
    require_same_shape(upstream, layer.latent_weight, "resilient_grad_all");
    TensorT<T> out(upstream.shape);
    const std::size_t m = layer.fan_in();
    for (std::size_t i = 0; i < layer.out_channels(); ++i)
        detail::resilient_grad_span(upstream.data.data() + i * m, layer.channel(i),
                                    layer.alpha[i], layer.gamma[i], out.data.data() + i * m, m);
    return out;
}

// Scaling-factor gradient: the task term plus the derivative of the
// reconstruction loss, -gamma_i * sum_j (w_ij - alpha_i b_ij) * b_ij.
template <typename T>
T alpha_grad(const BinaryLayerT<T>& layer, std::size_t channel, T task_grad_alpha) {
    const std::size_t m = layer.fan_in();
    const T* w = layer.channel(channel);
    const T a = layer.alpha[channel];
    const T g = layer.gamma[channel];
    if (g == T(0)) return task_grad_alpha;
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double b = static_cast<double>(sign_value(w[j]));
        acc += (static_cast<double>(w[j]) - static_cast<double>(a) * b) * b;
    }
    return task_grad_alpha + static_cast<T>(-static_cast<double>(g) * acc);
}

// Balanced-parameter update: gamma <- clamp(flip proportion * max |grad|).
// The flip proportion is the per-channel count of sign changes between two
// consecutive iterations divided by the fan-in.
template <typename T>
T gamma_update(PackedRow signs_t, PackedRow signs_t1, T max_grad_mag_t, double gamma_min,
               double gamma_max) {
    const std::uint64_t flips = count_sign_flips_row(signs_t, signs_t1);
    const double proportion = static_cast<double>(flips) / static_cast<double>(signs_t.valid_len);
    const double raw = proportion * static_cast<double>(max_grad_mag_t);
    return static_cast<T>(std::clamp(raw, gamma_min, gamma_max));
}

template <typename T>
T gamma_update(const BinaryLayerT<T>& layer, std::size_t channel, const PackedBitTensor& signs_t,
               const PackedBitTensor& signs_t1, T max_grad_mag_t, const TrainConfig& cfg) {
    (void)layer;
    return gamma_update(packed_row(signs_t, channel), packed_row(signs_t1, channel),
                        max_grad_mag_t, cfg.gamma_min, cfg.gamma_max);
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

// Momentum buffer matching one parameter tensor. Weight decay folds into the
// gradient before the momentum update; pass 0 for binary latent weights,
// whose pull toward the quantization levels comes from the reconstruction
// term instead.
template <typename T>
void sgd_update(T* param, T* velocity, const T* grad, std::size_t n, double lr, double momentum,
                double weight_decay) {
    for (std::size_t i = 0; i < n; ++i) {
        T g = grad[i];
        if (weight_decay != 0.0) g += static_cast<T>(weight_decay) * param[i];
        velocity[i] = static_cast<T>(momentum) * velocity[i] + g;
        param[i] -= static_cast<T>(lr) * velocity[i];
    }
}

// One latent-weight + alpha step for a binary layer.
template <typename T>
struct BinarySgdState {
    TensorT<T> v_weight;
    std::vector<T> v_alpha;
};

template <typename T>
void sgd_step(BinaryLayerT<T>& layer, BinarySgdState<T>& state, const TensorT<T>& weight_grad,
              const std::vector<T>& alpha_gradient, double lr, const TrainConfig& cfg) {
    if (state.v_weight.size() != layer.latent_weight.size())
        state.v_weight = TensorT<T>(layer.latent_weight.shape);
    if (state.v_alpha.size() != layer.alpha.size()) state.v_alpha.assign(layer.alpha.size(), T(0));
    sgd_update(layer.latent_weight.data.data(), state.v_weight.data.data(),
               weight_grad.data.data(), layer.latent_weight.size(), lr, cfg.momentum, 0.0);
    sgd_update(layer.alpha.data(), state.v_alpha.data(), alpha_gradient.data(),
               layer.alpha.size(), lr, cfg.momentum, 0.0);
    // alpha stays strictly positive
    for (T& a : layer.alpha) a = std::max(a, T(1e-8));
}

}  // namespace rebnn
