#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rebnn/tensor.hpp"

// Explicit forward/backward ops for small sequential CNNs/MLPs. No autodiff
// tape: every layer has a hand-written gradient, checked against finite
// differences in the test suite.
//
// Convolution is cross-correlation (no kernel flip). Accumulation runs in
// input-channel-then-kernel loop order; the OpenMP kernels parallelize only
// across output elements, so each element's reduction order is fixed and
// results are bitwise identical to the serial reference.

namespace rebnn {

template <typename T>
struct LayerGradsT {
    TensorT<T> d_weight;
    TensorT<T> d_input;
    std::vector<T> d_alpha;  // binary layers only
    std::vector<T> d_bias;   // linear only
};

using LayerGrads = LayerGradsT<float>;

struct ConvGeom {
    std::size_t c_in, h_in, w_in;
    std::size_t c_out, k;
    int stride, padding;
    std::size_t h_out, w_out;
};

template <typename T>
ConvGeom conv_geometry(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                       int padding, const char* op) {
    if (input.rank() != 3)
        throw DimensionError(std::string(op) + ": input must be [C,H,W], got " +
                             detail::shape_str(input.shape));
    if (weight.rank() != 4)
        throw DimensionError(std::string(op) + ": weight must be [Cout,Cin,K,K], got " +
                             detail::shape_str(weight.shape));
    if (weight.shape[2] != weight.shape[3])
        throw DimensionError(std::string(op) + ": kernel must be square, got " +
                             detail::shape_str(weight.shape));
    if (input.shape[0] != weight.shape[1])
        throw DimensionError(std::string(op) + ": input channel axis " +
                             std::to_string(input.shape[0]) + " vs weight axis 1 " +
                             std::to_string(weight.shape[1]));
    if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw DimensionError(std::string(op) + ": padding must be >= 0");
    ConvGeom g{input.shape[0], input.shape[1], input.shape[2],
               weight.shape[0], weight.shape[2], stride, padding, 0, 0};
    const long long h = static_cast<long long>(g.h_in) + 2 * padding - static_cast<long long>(g.k);
    const long long w = static_cast<long long>(g.w_in) + 2 * padding - static_cast<long long>(g.k);
    if (h < 0 || w < 0)
        throw DimensionError(std::string(op) + ": kernel exceeds padded input, input " +
                             detail::shape_str(input.shape) + " kernel K=" + std::to_string(g.k) +
                             " pad=" + std::to_string(padding));
    g.h_out = static_cast<std::size_t>(h / stride) + 1;
    g.w_out = static_cast<std::size_t>(w / stride) + 1;
    return g;
}

namespace detail {

struct KernelClip {
    std::size_t lo, hi;  // half-open valid kernel-offset range
};

// kernel offsets keeping base + offset inside [0, extent)
inline KernelClip clip_kernel(long long base, std::size_t k, std::size_t extent) {
    const long long lo = base < 0 ? -base : 0;
    long long hi = static_cast<long long>(extent) - base;
    hi = hi < 0 ? 0 : (hi > static_cast<long long>(k) ? static_cast<long long>(k) : hi);
    return {static_cast<std::size_t>(lo < hi ? lo : hi), static_cast<std::size_t>(hi)};
}

// One output element of a zero-padded cross-correlation. Fixed ic -> kh -> kw
// accumulation order (out-of-bounds terms skipped); shared by the parallel
// and serial kernels, which therefore agree bitwise.
template <typename T>
inline T conv_cell(const TensorT<T>& x, const TensorT<T>& w, const ConvGeom& g, std::size_t oc,
                   std::size_t oh, std::size_t ow) {
    const long long h0 = static_cast<long long>(oh) * g.stride - g.padding;
    const long long w0 = static_cast<long long>(ow) * g.stride - g.padding;
    const KernelClip ch = clip_kernel(h0, g.k, g.h_in);
    const KernelClip cw = clip_kernel(w0, g.k, g.w_in);
    const std::size_t cols = cw.hi - cw.lo;
    T acc = T(0);
    for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        const T* xc = x.data.data() + ic * g.h_in * g.w_in;
        const T* wc = w.data.data() + ((oc * g.c_in + ic) * g.k) * g.k;
        for (std::size_t kh = ch.lo; kh < ch.hi; ++kh) {
            const T* xrow = xc + (h0 + static_cast<long long>(kh)) * g.w_in + (w0 + cw.lo);
            const T* wrow = wc + kh * g.k + cw.lo;
            for (std::size_t j = 0; j < cols; ++j) acc += wrow[j] * xrow[j];
        }
    }
    return acc;
}

// d_weight element: reduction over valid output positions in oh -> ow order.
template <typename T>
inline T conv_dweight_cell(const TensorT<T>& x, const TensorT<T>& d_out, const ConvGeom& g,
                           std::size_t oc, std::size_t ic, std::size_t kh, std::size_t kw) {
    // oh values with 0 <= oh*stride - padding + kh < h_in
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
    const T* xc = x.data.data() + ic * g.h_in * g.w_in;
    T acc = T(0);
    for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
        const long long ih = static_cast<long long>(oh) * g.stride - g.padding +
                             static_cast<long long>(kh);
        const T* drow = dc + oh * g.w_out;
        const long long base = ih * static_cast<long long>(g.w_in) - g.padding +
                               static_cast<long long>(kw);
        for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
            acc += drow[ow] * xc[base + static_cast<long long>(ow) * g.stride];
    }
    return acc;
}

// d_input element: gather over (oc, oh, ow) with kernel offsets recovered
// from the output position; fixed oc -> oh -> ow order.
template <typename T>
inline T conv_dinput_cell(const TensorT<T>& w, const TensorT<T>& d_out, const ConvGeom& g,
                          std::size_t ic, std::size_t ih, std::size_t iw) {
    // oh with kh = ih + padding - oh*stride in [0, k)
    const auto gather_range = [&](std::size_t in_pos, std::size_t out_extent) {
        const long long top = static_cast<long long>(in_pos) + g.padding;
        long long lo = (top - static_cast<long long>(g.k) + g.stride) /
                       static_cast<long long>(g.stride);
        if (lo < 0) lo = 0;
        long long hi = top / g.stride + 1;
        if (hi > static_cast<long long>(out_extent)) hi = static_cast<long long>(out_extent);
        if (lo > hi) lo = hi;
        return KernelClip{static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    };
    const KernelClip rh = gather_range(ih, g.h_out);
    const KernelClip rw = gather_range(iw, g.w_out);
    const long long top_h = static_cast<long long>(ih) + g.padding;
    const long long top_w = static_cast<long long>(iw) + g.padding;
    T acc = T(0);
    for (std::size_t oc = 0; oc < g.c_out; ++oc) {
        const T* wc = w.data.data() + ((oc * g.c_in + ic) * g.k) * g.k;
        const T* dc = d_out.data.data() + oc * g.h_out * g.w_out;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
            const std::size_t kh = static_cast<std::size_t>(top_h - static_cast<long long>(oh) *
                                                                        g.stride);
            const T* wrow = wc + kh * g.k;
            const T* drow = dc + oh * g.w_out;
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                acc += wrow[static_cast<std::size_t>(top_w - static_cast<long long>(ow) *
                                                                 g.stride)] *
                       drow[ow];
        }
    }
    return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                          int padding) {
    const ConvGeom g = conv_geometry(input, weight, stride, padding, "conv2d_forward");
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    const std::int64_t n = static_cast<std::int64_t>(g.c_out * g.h_out);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t oc = static_cast<std::size_t>(i) / g.h_out;
        const std::size_t oh = static_cast<std::size_t>(i) % g.h_out;
        for (std::size_t ow = 0; ow < g.w_out; ++ow)
            out.at3(oc, oh, ow) = detail::conv_cell(input, weight, g, oc, oh, ow);
    }
    return out;
}

template <typename T>
LayerGradsT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weight,
                               const TensorT<T>& d_output, int stride, int padding) {
    const ConvGeom g = conv_geometry(input, weight, stride, padding, "conv2d_backward");
    if (d_output.shape != std::vector<std::size_t>{g.c_out, g.h_out, g.w_out})
        throw DimensionError("conv2d_backward: d_output shape " +
                             detail::shape_str(d_output.shape) + " does not match forward output [" +
                             std::to_string(g.c_out) + "," + std::to_string(g.h_out) + "," +
                             std::to_string(g.w_out) + "]");
    LayerGradsT<T> grads;
    grads.d_weight = TensorT<T>(weight.shape);
    grads.d_input = TensorT<T>(input.shape);

    const std::int64_t nw = static_cast<std::int64_t>(weight.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nw; ++i) {
        const std::size_t kw = static_cast<std::size_t>(i) % g.k;
        const std::size_t kh = (static_cast<std::size_t>(i) / g.k) % g.k;
        const std::size_t ic = (static_cast<std::size_t>(i) / (g.k * g.k)) % g.c_in;
        const std::size_t oc = static_cast<std::size_t>(i) / (g.k * g.k * g.c_in);
        grads.d_weight[i] = detail::conv_dweight_cell(input, d_output, g, oc, ic, kh, kw);
    }

    const std::int64_t nx = static_cast<std::int64_t>(input.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nx; ++i) {
        const std::size_t iw = static_cast<std::size_t>(i) % g.w_in;
        const std::size_t ih = (static_cast<std::size_t>(i) / g.w_in) % g.h_in;
        const std::size_t ic = static_cast<std::size_t>(i) / (g.w_in * g.h_in);
        grads.d_input[i] = detail::conv_dinput_cell(weight, d_output, g, ic, ih, iw);
    }
    return grads;
}

// Weight-gradient half of conv2d_backward; used where d_input is not needed.
template <typename T>
TensorT<T> conv2d_weight_grad(const TensorT<T>& input, const std::vector<std::size_t>& weight_shape,
                              const TensorT<T>& d_output, int stride, int padding) {
    TensorT<T> w_dummy(weight_shape);
    const ConvGeom g = conv_geometry(input, w_dummy, stride, padding, "conv2d_weight_grad");
    TensorT<T> out(weight_shape);
    const std::int64_t nw = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nw; ++i) {
        const std::size_t kw = static_cast<std::size_t>(i) % g.k;
        const std::size_t kh = (static_cast<std::size_t>(i) / g.k) % g.k;
        const std::size_t ic = (static_cast<std::size_t>(i) / (g.k * g.k)) % g.c_in;
        const std::size_t oc = static_cast<std::size_t>(i) / (g.k * g.k * g.c_in);
        out[i] = detail::conv_dweight_cell(input, d_output, g, oc, ic, kh, kw);
    }
    return out;
}

// Input-gradient half of conv2d_backward. Padded positions are not input
// positions, so the gather is identical for zero- and +1-padded forwards.
template <typename T>
TensorT<T> conv2d_input_grad(const std::vector<std::size_t>& input_shape, const TensorT<T>& weight,
                             const TensorT<T>& d_output, int stride, int padding) {
    TensorT<T> x_dummy(input_shape);
    const ConvGeom g = conv_geometry(x_dummy, weight, stride, padding, "conv2d_input_grad");
    TensorT<T> out(input_shape);
    const std::int64_t nx = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nx; ++i) {
        const std::size_t iw = static_cast<std::size_t>(i) % g.w_in;
        const std::size_t ih = (static_cast<std::size_t>(i) / g.w_in) % g.h_in;
        const std::size_t ic = static_cast<std::size_t>(i) / (g.w_in * g.h_in);
        out[i] = detail::conv_dinput_cell(weight, d_output, g, ic, ih, iw);
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const std::vector<T>& bias) {
    if (weight.rank() != 2)
        throw DimensionError("linear_forward: weight must be [out,in], got " +
                             detail::shape_str(weight.shape));
    if (input.size() != weight.shape[1])
        throw DimensionError("linear_forward: input size " + std::to_string(input.size()) +
                             " vs weight in-features " + std::to_string(weight.shape[1]));
    if (!bias.empty() && bias.size() != weight.shape[0])
        throw DimensionError("linear_forward: bias size " + std::to_string(bias.size()) +
                             " vs out-features " + std::to_string(weight.shape[0]));
    const std::size_t out_n = weight.shape[0], in_n = weight.shape[1];
    TensorT<T> out({out_n});
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(out_n); ++j) {
        T acc = bias.empty() ? T(0) : bias[j];
        const T* wr = weight.data.data() + static_cast<std::size_t>(j) * in_n;
        for (std::size_t i = 0; i < in_n; ++i) acc += wr[i] * input[i];
        out[j] = acc;
    }
    return out;
}

template <typename T>
LayerGradsT<T> linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                               const TensorT<T>& d_output) {
    if (d_output.size() != weight.shape[0])
        throw DimensionError("linear_backward: d_output size " + std::to_string(d_output.size()) +
                             " vs out-features " + std::to_string(weight.shape[0]));
    const std::size_t out_n = weight.shape[0], in_n = weight.shape[1];
    LayerGradsT<T> grads;
    grads.d_weight = TensorT<T>(weight.shape);
    grads.d_input = TensorT<T>(input.shape);
    grads.d_bias.assign(out_n, T(0));
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(out_n); ++j) {
        const T g = d_output[j];
        T* dwr = grads.d_weight.data.data() + static_cast<std::size_t>(j) * in_n;
        for (std::size_t i = 0; i < in_n; ++i) dwr[i] = g * input[i];
        grads.d_bias[j] = g;
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(in_n); ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < out_n; ++j)
            acc += weight.data[j * in_n + static_cast<std::size_t>(i)] * d_output[j];
        grads.d_input[i] = acc;
    }
    return grads;
}

// ---------------------------------------------------------------------------
// hardtanh — the clip surrogate whose gate feeds the straight-through
// estimator: forward clamps to [-1,1], backward passes gradient only where
// |pre_activation| <= 1.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> hardtanh_forward(const TensorT<T>& input) {
    TensorT<T> out(input.shape);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T v = input[i];
        out[i] = v > T(1) ? T(1) : (v < T(-1) ? T(-1) : v);
    }
    return out;
}

template <typename T>
TensorT<T> hardtanh_backward(const TensorT<T>& d_output, const TensorT<T>& pre_activation) {
    require_same_shape(d_output, pre_activation, "hardtanh_backward");
    TensorT<T> out(d_output.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(pre_activation[i]) <= T(1) ? d_output[i] : T(0);
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization over a minibatch of samples (channel axis 0 of each
// sample). Running statistics serve eval mode.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);  // running <- (1-m)*running + m*batch

    explicit BatchNormParams(std::size_t channels = 0)
        : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
          running_var(channels, T(1)) {}
    std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormCache {
    std::vector<T> mean, inv_std;
    std::vector<TensorT<T>> xhat;
};

namespace detail {
template <typename T>
inline std::size_t bn_spatial(const TensorT<T>& x) {
    std::size_t s = 1;
    for (std::size_t i = 1; i < x.rank(); ++i) s *= x.shape[i];
    return s;
}
}  // namespace detail

template <typename T>
std::vector<TensorT<T>> batchnorm_forward(const std::vector<TensorT<T>>& xs,
                                          BatchNormParams<T>& params, bool training,
                                          BatchNormCache<T>* cache) {
    if (xs.empty()) throw DimensionError("batchnorm_forward: empty batch");
    const std::size_t c = params.channels();
    if (xs[0].shape[0] != c)
        throw DimensionError("batchnorm_forward: channel axis " + std::to_string(xs[0].shape[0]) +
                             " vs params " + std::to_string(c));
    const std::size_t spatial = detail::bn_spatial(xs[0]);
    const std::size_t m = xs.size() * spatial;

    std::vector<T> mean(c), var(c);
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            // double accumulators keep batch statistics stable in float mode
            double sum = 0.0;
            for (const auto& x : xs) {
                const T* p = x.data.data() + ch * spatial;
                for (std::size_t i = 0; i < spatial; ++i) sum += static_cast<double>(p[i]);
            }
            const double mu = sum / static_cast<double>(m);
            double sq = 0.0;
            for (const auto& x : xs) {
                const T* p = x.data.data() + ch * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const double d = static_cast<double>(p[i]) - mu;
                    sq += d * d;
                }
            }
            mean[ch] = static_cast<T>(mu);
            var[ch] = static_cast<T>(sq / static_cast<double>(m));
        }
        // unbiased variance for the running estimate
        const double bessel = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            params.running_mean[ch] = (T(1) - params.momentum) * params.running_mean[ch] +
                                      params.momentum * mean[ch];
            params.running_var[ch] = (T(1) - params.momentum) * params.running_var[ch] +
                                     params.momentum * static_cast<T>(var[ch] * bessel);
        }
    } else {
        mean = params.running_mean;
        var = params.running_var;
    }

    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch)
        inv_std[ch] = T(1) / std::sqrt(var[ch] + params.eps);

    std::vector<TensorT<T>> ys;
    ys.reserve(xs.size());
    if (cache) {
        cache->mean = mean;
        cache->inv_std = inv_std;
        cache->xhat.clear();
        cache->xhat.reserve(xs.size());
    }
    for (const auto& x : xs) {
        TensorT<T> y(x.shape);
        TensorT<T> xh(x.shape);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = x.data.data() + ch * spatial;
            T* py = y.data.data() + ch * spatial;
            T* ph = xh.data.data() + ch * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const T h = (p[i] - mean[ch]) * inv_std[ch];
                ph[i] = h;
                py[i] = params.gamma[ch] * h + params.beta[ch];
            }
        }
        if (cache) cache->xhat.push_back(std::move(xh));
        ys.push_back(std::move(y));
    }
    return ys;
}

template <typename T>
struct BatchNormGrads {
    std::vector<TensorT<T>> d_xs;
    std::vector<T> d_gamma, d_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const std::vector<TensorT<T>>& d_ys,
                                     const BatchNormCache<T>& cache,
                                     const BatchNormParams<T>& params) {
    const std::size_t c = params.channels();
    const std::size_t spatial = detail::bn_spatial(d_ys[0]);
    const std::size_t n = d_ys.size();
    const double m = static_cast<double>(n * spatial);

    BatchNormGrads<T> out;
    out.d_gamma.assign(c, T(0));
    out.d_beta.assign(c, T(0));
    out.d_xs.reserve(n);
    for (const auto& dy : d_ys) out.d_xs.emplace_back(dy.shape);

    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const T* pdy = d_ys[s].data.data() + ch * spatial;
            const T* ph = cache.xhat[s].data.data() + ch * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += static_cast<double>(pdy[i]);
                sum_dy_xhat += static_cast<double>(pdy[i]) * static_cast<double>(ph[i]);
            }
        }
        out.d_gamma[ch] = static_cast<T>(sum_dy_xhat);
        out.d_beta[ch] = static_cast<T>(sum_dy);
        const double g = static_cast<double>(params.gamma[ch]);
        const double istd = static_cast<double>(cache.inv_std[ch]);
        for (std::size_t s = 0; s < n; ++s) {
            const T* pdy = d_ys[s].data.data() + ch * spatial;
            const T* ph = cache.xhat[s].data.data() + ch * spatial;
            T* pdx = out.d_xs[s].data.data() + ch * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double dxhat = static_cast<double>(pdy[i]) * g;
                const double dx = istd * (dxhat - sum_dy * g / m -
                                          static_cast<double>(ph[i]) * sum_dy_xhat * g / m);
                pdx[i] = static_cast<T>(dx);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy, fused loss + gradient
// ---------------------------------------------------------------------------

template <typename T>
std::pair<double, TensorT<T>> softmax_xent(const TensorT<T>& logits, std::size_t label) {
    if (label >= logits.size())
        throw std::out_of_range("softmax_xent: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.size()) + " classes");
    T max_v = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) max_v = std::max(max_v, logits[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        denom += std::exp(static_cast<double>(logits[i] - max_v));
    const double log_denom = std::log(denom);
    const double loss = log_denom - static_cast<double>(logits[label] - max_v);

    TensorT<T> d_logits(logits.shape);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = std::exp(static_cast<double>(logits[i] - max_v)) / denom;
        d_logits[i] = static_cast<T>(p - (i == label ? 1.0 : 0.0));
    }
    return {loss, std::move(d_logits)};
}

// ---------------------------------------------------------------------------
// Serial reference kernels. Same per-element routines as the parallel
// versions above, minus the pragmas; the test suite asserts bitwise equality.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight, int stride,
                          int padding) {
    const ConvGeom g = conv_geometry(input, weight, stride, padding, "conv2d_forward");
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    for (std::size_t oc = 0; oc < g.c_out; ++oc)
        for (std::size_t oh = 0; oh < g.h_out; ++oh)
            for (std::size_t ow = 0; ow < g.w_out; ++ow)
                out.at3(oc, oh, ow) = detail::conv_cell(input, weight, g, oc, oh, ow);
    return out;
}

template <typename T>
LayerGradsT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weight,
                               const TensorT<T>& d_output, int stride, int padding) {
    const ConvGeom g = conv_geometry(input, weight, stride, padding, "conv2d_backward");
    LayerGradsT<T> grads;
    grads.d_weight = TensorT<T>(weight.shape);
    grads.d_input = TensorT<T>(input.shape);
    for (std::size_t oc = 0; oc < g.c_out; ++oc)
        for (std::size_t ic = 0; ic < g.c_in; ++ic)
            for (std::size_t kh = 0; kh < g.k; ++kh)
                for (std::size_t kw = 0; kw < g.k; ++kw)
                    grads.d_weight.at4(oc, ic, kh, kw) =
                        detail::conv_dweight_cell(input, d_output, g, oc, ic, kh, kw);
    for (std::size_t ic = 0; ic < g.c_in; ++ic)
        for (std::size_t ih = 0; ih < g.h_in; ++ih)
            for (std::size_t iw = 0; iw < g.w_in; ++iw)
                grads.d_input.at3(ic, ih, iw) =
                    detail::conv_dinput_cell(weight, d_output, g, ic, ih, iw);
    return grads;
}

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const std::vector<T>& bias) {
    const std::size_t out_n = weight.shape[0], in_n = weight.shape[1];
    TensorT<T> out({out_n});
    for (std::size_t j = 0; j < out_n; ++j) {
        T acc = bias.empty() ? T(0) : bias[j];
        const T* wr = weight.data.data() + j * in_n;
        for (std::size_t i = 0; i < in_n; ++i) acc += wr[i] * input[i];
        out[j] = acc;
    }
    return out;
}

template <typename T>
LayerGradsT<T> linear_backward(const TensorT<T>& input, const TensorT<T>& weight,
                               const TensorT<T>& d_output) {
    const std::size_t out_n = weight.shape[0], in_n = weight.shape[1];
    LayerGradsT<T> grads;
    grads.d_weight = TensorT<T>(weight.shape);
    grads.d_input = TensorT<T>(input.shape);
    grads.d_bias.assign(out_n, T(0));
    for (std::size_t j = 0; j < out_n; ++j) {
        const T g = d_output[j];
        T* dwr = grads.d_weight.data.data() + j * in_n;
        for (std::size_t i = 0; i < in_n; ++i) dwr[i] = g * input[i];
        grads.d_bias[j] = g;
    }
    for (std::size_t i = 0; i < in_n; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < out_n; ++j) acc += weight.data[j * in_n + i] * d_output[j];
        grads.d_input[i] = acc;
    }
    return grads;
}

template <typename T>
TensorT<T> conv2d_weight_grad(const TensorT<T>& input, const std::vector<std::size_t>& weight_shape,
                              const TensorT<T>& d_output, int stride, int padding) {
    TensorT<T> w_dummy(weight_shape);
    const ConvGeom g = conv_geometry(input, w_dummy, stride, padding, "conv2d_weight_grad");
    TensorT<T> out(weight_shape);
    for (std::size_t oc = 0; oc < g.c_out; ++oc)
        for (std::size_t ic = 0; ic < g.c_in; ++ic)
            for (std::size_t kh = 0; kh < g.k; ++kh)
                for (std::size_t kw = 0; kw < g.k; ++kw)
                    out.at4(oc, ic, kh, kw) =
                        rebnn::detail::conv_dweight_cell(input, d_output, g, oc, ic, kh, kw);
    return out;
}

template <typename T>
TensorT<T> conv2d_input_grad(const std::vector<std::size_t>& input_shape, const TensorT<T>& weight,
                             const TensorT<T>& d_output, int stride, int padding) {
    TensorT<T> x_dummy(input_shape);
    const ConvGeom g = conv_geometry(x_dummy, weight, stride, padding, "conv2d_input_grad");
    TensorT<T> out(input_shape);
    for (std::size_t ic = 0; ic < g.c_in; ++ic)
        for (std::size_t ih = 0; ih < g.h_in; ++ih)
            for (std::size_t iw = 0; iw < g.w_in; ++iw)
                out.at3(ic, ih, iw) =
                    rebnn::detail::conv_dinput_cell(weight, d_output, g, ic, ih, iw);
    return out;
}

}  // namespace serial

}  // namespace rebnn
