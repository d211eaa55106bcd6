#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "rebnn/binarize.hpp"
#include "rebnn/bitpack.hpp"
#include "rebnn/tensor.hpp"

// Bit-packed inference backend. Weights are packed once per layer (one row
// per output channel over the C_in*K*K reduction); each output position
// gathers its input patch into one packed row (out-of-bounds bits encode
// sign(0) = +1) and reduces with XNOR + popcount. Integer accumulation plus
// a single alpha multiply at the end keeps the result exactly equal to the
// float simulated path.

namespace rebnn {

template <typename T>
PackedBitTensor pack_weight_signs(const BinaryLayerT<T>& layer) {
    return pack(sign_binarize(layer.latent_weight), 1);
}

namespace detail {

// Pack one input patch (fixed ic -> kh -> kw bit order, matching the float
// kernel's accumulation order) into `row`; bits outside the input are +1.
template <typename T>
inline void pack_patch(const TensorT<T>& input_signs, const ConvGeom& g, std::size_t oh,
                       std::size_t ow, std::uint64_t* row, std::size_t n_words) {
    for (std::size_t k = 0; k < n_words; ++k) row[k] = ~0ULL;
    const long long h0 = static_cast<long long>(oh) * g.stride - g.padding;
    const long long w0 = static_cast<long long>(ow) * g.stride - g.padding;
    std::size_t j = 0;
    for (std::size_t ic = 0; ic < g.c_in; ++ic)
        for (std::size_t kh = 0; kh < g.k; ++kh) {
            const long long ih = h0 + static_cast<long long>(kh);
            const bool h_in = ih >= 0 && ih < static_cast<long long>(g.h_in);
            for (std::size_t kw = 0; kw < g.k; ++kw, ++j) {
                const long long iw = w0 + static_cast<long long>(kw);
                if (h_in && iw >= 0 && iw < static_cast<long long>(g.w_in)) {
                    if (input_signs.at3(ic, ih, iw) < T(0)) row[j / 64] &= ~(1ULL << (j % 64));
                }
            }
        }
}

}  // namespace detail

// Packed binary convolution over pre-packed weights.
template <typename T>
TensorT<T> binary_conv_packed(const TensorT<T>& input_signs, const PackedBitTensor& packed_weights,
                              const std::vector<T>& alpha, std::size_t kernel, int stride,
                              int padding) {
    const std::size_t c_out = packed_weights.rows;
    TensorT<T> w_dummy({c_out, input_signs.shape[0], kernel, kernel});
    const ConvGeom g = conv_geometry(input_signs, w_dummy, stride, padding, "binary_conv_packed");
    if (packed_weights.valid_len != g.c_in * g.k * g.k)
        throw DimensionError("binary_conv_packed: packed fan-in " +
                             std::to_string(packed_weights.valid_len) + " vs expected " +
                             std::to_string(g.c_in * g.k * g.k));
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    const std::size_t n_words = packed_weights.words_per_row;
    const std::int64_t positions = static_cast<std::int64_t>(g.h_out * g.w_out);
#pragma omp parallel
    {
        std::vector<std::uint64_t> patch(n_words);
#pragma omp for schedule(static)
        for (std::int64_t p = 0; p < positions; ++p) {
            const std::size_t oh = static_cast<std::size_t>(p) / g.w_out;
            const std::size_t ow = static_cast<std::size_t>(p) % g.w_out;
            detail::pack_patch(input_signs, g, oh, ow, patch.data(), n_words);
            const PackedRow pr{patch.data(), n_words, packed_weights.valid_len};
            for (std::size_t oc = 0; oc < g.c_out; ++oc) {
                const long long dot = xnor_popcount_dot(packed_row(packed_weights, oc), pr);
                out.at3(oc, oh, ow) = alpha[oc] * static_cast<T>(dot);
            }
        }
    }
    return out;
}

// Convenience wrapper: binarizes the input, packs the layer weights, runs the
// packed kernel. Inference code pre-packs instead.
template <typename T>
TensorT<T> binary_conv_packed(const TensorT<T>& input, const BinaryLayerT<T>& layer, int stride,
                              int padding) {
    const PackedBitTensor pw = pack_weight_signs(layer);
    return binary_conv_packed(sign_binarize(input), pw, layer.alpha,
                              layer.latent_weight.shape[2], stride, padding);
}

namespace serial {

template <typename T>
TensorT<T> binary_conv_packed(const TensorT<T>& input_signs, const PackedBitTensor& packed_weights,
                              const std::vector<T>& alpha, std::size_t kernel, int stride,
                              int padding) {
    const std::size_t c_out = packed_weights.rows;
    TensorT<T> w_dummy({c_out, input_signs.shape[0], kernel, kernel});
    const ConvGeom g = conv_geometry(input_signs, w_dummy, stride, padding, "binary_conv_packed");
    TensorT<T> out({g.c_out, g.h_out, g.w_out});
    const std::size_t n_words = packed_weights.words_per_row;
    std::vector<std::uint64_t> patch(n_words);
    for (std::size_t oh = 0; oh < g.h_out; ++oh)
        for (std::size_t ow = 0; ow < g.w_out; ++ow) {
            rebnn::detail::pack_patch(input_signs, g, oh, ow, patch.data(), n_words);
            const PackedRow pr{patch.data(), n_words, packed_weights.valid_len};
            for (std::size_t oc = 0; oc < g.c_out; ++oc) {
                const long long dot = xnor_popcount_dot(packed_row(packed_weights, oc), pr);
                out.at3(oc, oh, ow) = alpha[oc] * static_cast<T>(dot);
            }
        }
    return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Efficiency accounting. Convention: one binary multiply-accumulate counts as
// 2 BOPs, one real multiply-accumulate as 2 FLOPs, and the combined metric is
// total_ops = bops/64 + flops.
// ---------------------------------------------------------------------------

struct OpsReport {
    std::uint64_t bops = 0;
    std::uint64_t flops = 0;
    std::uint64_t model_bytes_binary = 0;  // binary layers packed, rest float
    std::uint64_t model_bytes_float = 0;   // everything held as 32-bit floats

    double total_ops() const {
        return static_cast<double>(bops) / 64.0 + static_cast<double>(flops);
    }
    double compression_ratio() const {
        return model_bytes_binary == 0
                   ? 1.0
                   : static_cast<double>(model_bytes_float) / static_cast<double>(model_bytes_binary);
    }

    OpsReport& operator+=(const OpsReport& o) {
        bops += o.bops;
        flops += o.flops;
        model_bytes_binary += o.model_bytes_binary;
        model_bytes_float += o.model_bytes_float;
        return *this;
    }
};

// Accounting for one binary conv layer: XNOR/popcount MACs plus the per-output
// alpha multiply; storage is ceil(M/64) words per output channel plus alpha.
inline OpsReport binary_conv_ops(std::size_t c_out, std::size_t c_in, std::size_t k,
                                 std::size_t h_out, std::size_t w_out) {
    OpsReport r;
    const std::uint64_t macs = static_cast<std::uint64_t>(c_out) * c_in * k * k * h_out * w_out;
    r.bops = 2 * macs;
    r.flops = static_cast<std::uint64_t>(c_out) * h_out * w_out;
    const std::uint64_t m = static_cast<std::uint64_t>(c_in) * k * k;
    r.model_bytes_binary = ((m + 63) / 64) * 8 * c_out + 4 * c_out;
    r.model_bytes_float = m * c_out * 4;
    return r;
}

inline OpsReport real_conv_ops(std::size_t c_out, std::size_t c_in, std::size_t k,
                               std::size_t h_out, std::size_t w_out) {
    OpsReport r;
    r.flops = 2ULL * c_out * c_in * k * k * h_out * w_out;
    r.model_bytes_binary = r.model_bytes_float = static_cast<std::uint64_t>(c_out) * c_in * k * k * 4;
    return r;
}

inline OpsReport linear_ops(std::size_t out_n, std::size_t in_n) {
    OpsReport r;
    r.flops = 2ULL * out_n * in_n + out_n;
    r.model_bytes_binary = r.model_bytes_float = static_cast<std::uint64_t>(out_n) * (in_n + 1) * 4;
    return r;
}

inline OpsReport batchnorm_ops(std::size_t channels, std::size_t spatial) {
    OpsReport r;
    r.flops = 2ULL * channels * spatial;  // folded scale + shift per element
    r.model_bytes_binary = r.model_bytes_float = static_cast<std::uint64_t>(channels) * 4 * 4;
    return r;
}

// ---------------------------------------------------------------------------
// Dot-product microbenchmark: packed XNOR/popcount vs float multiply-add over
// the same +/-1 data. Median of `repetitions` timings.
// ---------------------------------------------------------------------------

struct DotBenchResult {
    double packed_ns = 0.0;
    double float_ns = 0.0;
    double speedup = 0.0;
    bool results_agree = false;
};

DotBenchResult bench_dot(std::size_t m, std::size_t repetitions, std::uint64_t seed = 42);

}  // namespace rebnn
