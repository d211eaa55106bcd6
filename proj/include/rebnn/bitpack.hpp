#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rebnn/tensor.hpp"

namespace rebnn {

// {-1,+1} values packed 64 per word along the innermost reduction axis.
// Bit 1 encodes +1, bit 0 encodes -1. Padding bits in the final word of each
// row are forced to the +1 encoding and excluded through valid_len.
struct PackedBitTensor {
    std::vector<std::size_t> logical_shape;
    std::size_t rows = 0;
    std::size_t valid_len = 0;      // bits per row that carry data
    std::size_t words_per_row = 0;  // ceil(valid_len / 64)
    std::vector<std::uint64_t> words;

    const std::uint64_t* row(std::size_t r) const { return words.data() + r * words_per_row; }
    std::uint64_t* row(std::size_t r) { return words.data() + r * words_per_row; }
};

// Lightweight view of one packed row.
struct PackedRow {
    const std::uint64_t* words = nullptr;
    std::size_t n_words = 0;
    std::size_t valid_len = 0;
};

inline PackedRow packed_row(const PackedBitTensor& t, std::size_t r) {
    return PackedRow{t.row(r), t.words_per_row, t.valid_len};
}

// Mask selecting the valid bits of the final word of a row.
inline std::uint64_t tail_mask(std::size_t valid_len) {
    const std::size_t rem = valid_len % 64;
    return rem == 0 ? ~0ULL : ((1ULL << rem) - 1);
}

// Pack a +/-1 tensor. The leading `row_dims` axes form rows; the remaining
// axes are flattened into the packed reduction axis. Defaults: 1-d tensors
// become a single row, higher-rank tensors use axis 0 as the row axis.
template <typename T>
PackedBitTensor pack(const TensorT<T>& signs, std::size_t row_dims) {
    if (row_dims >= signs.rank() && !(row_dims == 0 && signs.rank() == 0))
        throw DimensionError("pack: row_dims must leave at least one reduction axis");
    PackedBitTensor out;
    out.logical_shape = signs.shape;
    out.rows = 1;
    for (std::size_t i = 0; i < row_dims; ++i) out.rows *= signs.shape[i];
    out.valid_len = signs.size() / out.rows;
    out.words_per_row = (out.valid_len + 63) / 64;
    out.words.assign(out.rows * out.words_per_row, ~0ULL);  // pad bits encode +1

    for (std::size_t r = 0; r < out.rows; ++r) {
        std::uint64_t* w = out.row(r);
        const T* src = signs.data.data() + r * out.valid_len;
        for (std::size_t j = 0; j < out.valid_len; ++j) {
            const T v = src[j];
            if (v != T(1) && v != T(-1))
                throw std::domain_error("pack: element not in {-1,+1}");
            if (v == T(-1)) w[j / 64] &= ~(1ULL << (j % 64));
        }
    }
    return out;
}

template <typename T>
PackedBitTensor pack(const TensorT<T>& signs) {
    return pack(signs, signs.rank() > 1 ? 1 : 0);
}

template <typename T>
TensorT<T> unpack(const PackedBitTensor& p) {
    TensorT<T> out(p.logical_shape);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const std::uint64_t* w = p.row(r);
        T* dst = out.data.data() + r * p.valid_len;
        for (std::size_t j = 0; j < p.valid_len; ++j)
            dst[j] = (w[j / 64] >> (j % 64)) & 1ULL ? T(1) : T(-1);
    }
    return out;
}

// Dot product over +/-1 values: 2*popcount(XNOR masked to valid bits) - M.
inline long long xnor_popcount_dot(PackedRow a, PackedRow b) {
    if (a.valid_len != b.valid_len)
        throw DimensionError("xnor_popcount_dot: length mismatch " + std::to_string(a.valid_len) +
                             " vs " + std::to_string(b.valid_len));
    const std::size_t full = a.valid_len / 64;
    long long agree = 0;
    for (std::size_t k = 0; k < full; ++k)
        agree += std::popcount(~(a.words[k] ^ b.words[k]));
    if (a.valid_len % 64)
        agree += std::popcount(~(a.words[full] ^ b.words[full]) & tail_mask(a.valid_len));
    return 2 * agree - static_cast<long long>(a.valid_len);
}

// Number of positions whose sign differs between two packed snapshots of the
// same layout. Pad bits agree by construction and cancel in the XOR.
inline std::uint64_t count_sign_flips(const PackedBitTensor& a, const PackedBitTensor& b) {
    if (a.logical_shape != b.logical_shape)
        throw DimensionError("count_sign_flips: shape mismatch " +
                             detail::shape_str(a.logical_shape) + " vs " +
                             detail::shape_str(b.logical_shape));
    std::uint64_t flips = 0;
    for (std::size_t k = 0; k < a.words.size(); ++k)
        flips += std::popcount(a.words[k] ^ b.words[k]);
    return flips;
}

// Per-row flip count between two snapshots.
inline std::uint64_t count_sign_flips_row(PackedRow a, PackedRow b) {
    if (a.valid_len != b.valid_len)
        throw DimensionError("count_sign_flips_row: length mismatch");
    std::uint64_t flips = 0;
    for (std::size_t k = 0; k < a.n_words; ++k) flips += std::popcount(a.words[k] ^ b.words[k]);
    return flips;
}

}  // namespace rebnn
