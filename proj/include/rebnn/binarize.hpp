#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rebnn/bitpack.hpp"
#include "rebnn/nn_ops.hpp"
#include "rebnn/tensor.hpp"

// Binarization primitives: sign function (sign(0) = +1 so the float and the
// bit-packed paths agree bit for bit), channel-wise absolute mean scaling,
// the simulated binary convolution used on the training path, and the
// clip-gated straight-through estimator.

namespace rebnn {

// Per-layer state of a binary convolution: real latent weights, learned
// per-output-channel scaling factors alpha, per-channel balanced parameters
// gamma weighting the reconstruction pull, and two packed sign snapshots for
// sequential-oscillation detection.
template <typename T>
struct BinaryLayerT {
    TensorT<T> latent_weight;  // [C_out, C_in, K, K]
    std::vector<T> alpha;      // > 0, clamped at 1e-8 from below
    std::vector<T> gamma;
    PackedBitTensor prev_sign;       // sign(w) at iteration t-1
    PackedBitTensor prev_prev_sign;  // sign(w) at iteration t-2

    std::size_t out_channels() const { return latent_weight.shape[0]; }
    std::size_t fan_in() const {
        return latent_weight.shape[1] * latent_weight.shape[2] * latent_weight.shape[3];
    }
    const T* channel(std::size_t i) const { return latent_weight.data.data() + i * fan_in(); }
    T* channel(std::size_t i) { return latent_weight.data.data() + i * fan_in(); }
};

using BinaryLayer = BinaryLayerT<float>;

template <typename T>
inline T sign_value(T x) {
    return x < T(0) ? T(-1) : T(1);
}

template <typename T>
TensorT<T> sign_binarize(const TensorT<T>& x) {
    TensorT<T> out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sign_value(x[i]);
    return out;
}

// Channel-wise absolute mean ||w||_1 / M, the closed-form minimizer of the
// non-parametric scaling objective. Used to initialize alpha.
template <typename T>
T cam_scale(const T* w, std::size_t m) {
    if (m == 0) throw DimensionError("cam_scale: empty channel");
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += std::abs(static_cast<double>(w[j]));
    return static_cast<T>(acc / static_cast<double>(m));
}

template <typename T>
T cam_scale(const TensorT<T>& weight_channel) {
    return cam_scale(weight_channel.data.data(), weight_channel.size());
}

namespace detail {

// Output element of a sign-sign convolution. Out-of-bounds positions carry
// sign(0) = +1, handled as total-weight correction: the in-bounds region
// contributes w * s, everything else contributes w * 1, and
// sum_outside(w) = w_total - sum_inside(w). All operands are +/-1, so every
// partial sum is an exact small integer and the result is order-independent.
// `w_total` is the kernel's channel sum, precomputed by the caller.
template <typename T>
inline T sign_conv_cell(const TensorT<T>& sx, const TensorT<T>& sw, const ConvGeom& g,
                        std::size_t oc, std::size_t oh, std::size_t ow, T w_total) {
    const long long h0 = static_cast<long long>(oh) * g.stride - g.padding;
    const long long w0 = static_cast<long long>(ow) * g.stride - g.padding;
    const KernelClip ch = clip_kernel(h0, g.k, g.h_in);
    const KernelClip cw = clip_kernel(w0, g.k, g.w_in);
    const std::size_t cols = cw.hi - cw.lo;
    T acc = T(0);        // sum of w * s over the in-bounds region
    T inside = T(0);     // sum of w over the in-bounds region
    for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        const T* xc = sx.data.data() + ic * g.h_in * g.w_in;
        const T* wc = sw.data.data() + ((oc * g.c_in + ic) * g.k) * g.k;
        for (std::size_t kh = ch.lo; kh < ch.hi; ++kh) {
            const T* xrow = xc + (h0 + static_cast<long long>(kh)) * g.w_in + (w0 + cw.lo);
            const T* wrow = wc + kh * g.k + cw.lo;
            for (std::size_t j = 0; j < cols; ++j) {
                acc += wrow[j] * xrow[j];
                inside += wrow[j];
            }
        }
    }
    return acc + (w_total - inside);
}

// Per-channel weight sums feeding the padding correction above.
template <typename T>
inline std::vector<T> channel_weight_totals(const TensorT<T>& sw) {
    const std::size_t c_out = sw.shape[0];
    const std::size_t m = sw.size() / c_out;
    std::vector<T> totals(c_out, T(0));
    for (std::size_t oc = 0; oc < c_out; ++oc) {
        const T* p = sw.data.data() + oc * m;
        for (std::size_t j = 0; j < m; ++j) totals[oc] += p[j];
    }
    return totals;
}

// Gradient w.r.t. the effective weight w_hat = alpha * sign(w): reduction of
// d_out against the binarized input, with out-of-bounds positions reading
// sign(0) = +1 via the same total-sum correction (d_total is the channel sum
// of d_out).
template <typename T>
inline T sign_conv_dweight_cell(const TensorT<T>& sx, const TensorT<T>& d_out, const ConvGeom& g,
                                std::size_t oc, std::size_t ic, std::size_t kh, std::size_t kw,
                                T d_total) {
    const auto out_range = [&](std::size_t kk, std::size_t extent, std::size_t out_extent) {
        long long lo_num = g.padding - static_cast<long long>(kk);
        long long lo = lo_num <= 0 ? 0 : (lo_num + g.stride - 1) / g.stride;
        long long hi_num = static_cast<long long>(extent) - 1 + g.padding -
                           static_cast<long long>(kk);
        long long hi = hi_num < 0 ? 0 : hi_num / g.stride + 1;
        if (hi > static_cast<long long>(out_extent)) hi = static_cast<long long>(out_extent);
        if (lo > hi) lo = hi;
        return KernelClip{static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    };
    const KernelClip rh = out_range(kh, g.h_in, g.h_out);
    const KernelClip rw = out_range(kw, g.w_in, g.w_out);
    const T* dc = d_out.data.data() + oc * g.h_out * g.w_out;
    const T* xc = sx.data.data() + ic * g.h_in * g.w_in;
    T acc = T(0);     // sum of d * s over valid output positions
    T inside = T(0);  // sum of d over valid output positions
    for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
        const long long ih = static_cast<long long>(oh) * g.stride - g.padding +
                             static_cast<long long>(kh);
        const T* drow = dc + oh * g.w_out;
        const long long base = ih * static_cast<long long>(g.w_in) - g.padding +
                               static_cast<long long>(kw);
        for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) {
            const T d = drow[ow];
            acc += d * xc[base + static_cast<long long>(ow) * g.stride];
            inside += d;
        }
    }
    return acc + (d_total - inside);
}

template <typename T>
inline std::vector<T> channel_output_totals(const TensorT<T>& d_out) {
    const std::size_t c_out = d_out.shape[0];
    const std::size_t plane = d_out.shape[1] * d_out.shape[2];
    std::vector<T> totals(c_out, T(0));
    for (std::size_t oc = 0; oc < c_out; ++oc) {
        const T* p = d_out.data.data() + oc * plane;
        for (std::size_t j = 0; j < plane; ++j) totals[oc] += p[j];
    }
    return totals;
}

}  // namespace detail

// Raw sign-sign convolution (pre-alpha). Exposed separately so the trainer
// can cache it for the alpha gradient.
template <typename T>
TensorT<T> sign_conv_raw(const TensorT<T>& input_signs, const TensorT<T>& weight_signs, int stride,
                         int padding) {
    const ConvGeom g = conv_geometry(input_signs, weight_signs, stride, padding, "binary_conv");
    const std::vector<T> w_totals = detail::channel_weight_totals(weight_signs);
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    const std::int64_t n = static_cast<std::int64_t>(g.c_out * g.h_out);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t oc = static_cast<std::size_t>(i) / g.h_out;
        const std::size_t oh = static_cast<std::size_t>(i) % g.h_out;
        for (std::size_t ow = 0; ow < g.w_out; ++ow)
            out.at3(oc, oh, ow) =
                detail::sign_conv_cell(input_signs, weight_signs, g, oc, oh, ow, w_totals[oc]);
    }
    return out;
}

// Training-path binary convolution: alpha_i * conv(sign(w), sign(x)) with the
// input binarized to {-1,+1} and no activation scaling. Numerically equal to
// the packed XNOR/popcount path.
template <typename T>
TensorT<T> binary_conv_forward(const TensorT<T>& input, const BinaryLayerT<T>& layer, int stride,
                               int padding) {
    const TensorT<T> sx = sign_binarize(input);
    const TensorT<T> sw = sign_binarize(layer.latent_weight);
    TensorT<T> out = sign_conv_raw(sx, sw, stride, padding);
    const std::size_t plane = out.shape[1] * out.shape[2];
    for (std::size_t oc = 0; oc < out.shape[0]; ++oc) {
        const T a = layer.alpha[oc];
        T* p = out.data.data() + oc * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= a;
    }
    return out;
}

// d(loss)/d(w_hat) for a binary convolution, where w_hat = alpha * sign(w).
// Independent of alpha; this is the quantity whose per-channel max magnitude
// drives the balanced-parameter update.
template <typename T>
TensorT<T> sign_conv_weight_grad(const TensorT<T>& input_signs, const TensorT<T>& d_output,
                                 const std::vector<std::size_t>& weight_shape, int stride,
                                 int padding) {
    TensorT<T> w_dummy(weight_shape);
    const ConvGeom g = conv_geometry(input_signs, w_dummy, stride, padding, "binary_conv_backward");
    if (d_output.shape != std::vector<std::size_t>{g.c_out, g.h_out, g.w_out})
        throw DimensionError("binary_conv_backward: d_output shape " +
                             detail::shape_str(d_output.shape) + " mismatch");
    const std::vector<T> d_totals = detail::channel_output_totals(d_output);
    TensorT<T> out(weight_shape);
    const std::int64_t nw = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nw; ++i) {
        const std::size_t kw = static_cast<std::size_t>(i) % g.k;
        const std::size_t kh = (static_cast<std::size_t>(i) / g.k) % g.k;
        const std::size_t ic = (static_cast<std::size_t>(i) / (g.k * g.k)) % g.c_in;
        const std::size_t oc = static_cast<std::size_t>(i) / (g.k * g.k * g.c_in);
        out[i] = detail::sign_conv_dweight_cell(input_signs, d_output, g, oc, ic, kh, kw,
                                                d_totals[oc]);
    }
    return out;
}

// Straight-through weight gradient: alpha_i * upstream gated by 1_{|w|<=1}.
// The gamma = 0 baseline, and the task-loss term inside the resilient form.
template <typename T>
TensorT<T> ste_weight_grad(const TensorT<T>& upstream, T alpha_i, const TensorT<T>& latent_w) {
    require_same_shape(upstream, latent_w, "ste_weight_grad");
    TensorT<T> out(upstream.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(latent_w[i]) <= T(1) ? alpha_i * upstream[i] : T(0);
    return out;
}

// Clip-STE for binarized activations: upstream gated by 1_{|a|<=1} of the
// pre-binarization activation.
template <typename T>
TensorT<T> activation_ste_backward(const TensorT<T>& upstream, const TensorT<T>& pre_activation) {
    require_same_shape(upstream, pre_activation, "activation_ste_backward");
    TensorT<T> out(upstream.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(pre_activation[i]) <= T(1) ? upstream[i] : T(0);
    return out;
}

namespace serial {

template <typename T>
TensorT<T> sign_conv_raw(const TensorT<T>& input_signs, const TensorT<T>& weight_signs, int stride,
                         int padding) {
    const ConvGeom g = conv_geometry(input_signs, weight_signs, stride, padding, "binary_conv");
    const std::vector<T> w_totals = rebnn::detail::channel_weight_totals(weight_signs);
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    for (std::size_t oc = 0; oc < g.c_out; ++oc)
        for (std::size_t oh = 0; oh < g.h_out; ++oh)
            for (std::size_t ow = 0; ow < g.w_out; ++ow)
                out.at3(oc, oh, ow) = rebnn::detail::sign_conv_cell(input_signs, weight_signs, g,
                                                                    oc, oh, ow, w_totals[oc]);
    return out;
}

template <typename T>
TensorT<T> sign_conv_weight_grad(const TensorT<T>& input_signs, const TensorT<T>& d_output,
                                 const std::vector<std::size_t>& weight_shape, int stride,
                                 int padding) {
    TensorT<T> w_dummy(weight_shape);
    const ConvGeom g = conv_geometry(input_signs, w_dummy, stride, padding, "binary_conv_backward");
    const std::vector<T> d_totals = rebnn::detail::channel_output_totals(d_output);
    TensorT<T> out(weight_shape);
    for (std::size_t oc = 0; oc < g.c_out; ++oc)
        for (std::size_t ic = 0; ic < g.c_in; ++ic)
            for (std::size_t kh = 0; kh < g.k; ++kh)
                for (std::size_t kw = 0; kw < g.k; ++kw)
                    out.at4(oc, ic, kh, kw) = rebnn::detail::sign_conv_dweight_cell(
                        input_signs, d_output, g, oc, ic, kh, kw, d_totals[oc]);
    return out;
}

}  // namespace serial

}  // namespace rebnn
