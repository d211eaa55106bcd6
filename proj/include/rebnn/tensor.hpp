#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rebnn {

/// Thrown on rank/extent mismatches; the message names the offending axes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}
}  // namespace detail

// Dense row-major n-d array. float carries training state; double backs the
// numeric test oracles.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(count(shape), fill);
    }

    TensorT(std::vector<std::size_t> s, std::vector<T> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (count(shape) != data.size())
            throw DimensionError("tensor: shape " + detail::shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " elements");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            if (d == 0) throw DimensionError("tensor: zero extent in shape " + detail::shape_str(s));
            n *= d;
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 3-d index [c][h][w]
    T& at3(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * shape[1] + h) * shape[2] + w];
    }
    const T& at3(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * shape[1] + h) * shape[2] + w];
    }

    // 4-d index [o][i][kh][kw]
    T& at4(std::size_t o, std::size_t i, std::size_t kh, std::size_t kw) {
        return data[((o * shape[1] + i) * shape[2] + kh) * shape[3] + kw];
    }
    const T& at4(std::size_t o, std::size_t i, std::size_t kh, std::size_t kw) const {
        return data[((o * shape[1] + i) * shape[2] + kh) * shape[3] + kw];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (const T& v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

// Validation hook: NaN/Inf in a tensor is a contract violation.
template <typename T>
void require_finite(const TensorT<T>& t, const char* what) {
    if (!all_finite(t)) throw std::domain_error(std::string(what) + ": non-finite element");
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + detail::shape_str(a.shape) +
                             " vs " + detail::shape_str(b.shape));
}

}  // namespace rebnn
